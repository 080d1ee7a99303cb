#pragma once

#include "latsched/substrate/rng.hpp"
#include "latsched/substrate/tensor.hpp"

#include <functional>
#include <unordered_map>
#include <vector>

namespace latsched::substrate {

class Graph;

// Handle to a node in a Graph tape. Values are computed eagerly on creation.
struct Value {
    Graph* graph = nullptr;
    int id = -1;
    int rows = 0;
    int cols = 0;

    bool valid() const { return graph != nullptr && id >= 0; }
    const std::vector<double>& data() const;
    double scalar() const;
};

enum class Op : uint8_t {
    leaf,
    add,
    add_row,      // [R,C] + [1,C]
    sub,
    mul,
    scale,        // a * s + t (affine with scalar attrs)
    matmul,
    relu,
    elu,
    sigmoid,
    tanh_fn,
    softplus,
    exp_fn,
    log_fn,
    square,
    layer_norm,   // inputs: x, gain [1,C], bias [1,C]
    batch_norm,   // inputs: x, gain, bias; running stats via attached pointers
    conv2d,       // inputs: x [B, Cin*H*W], w [Cout, Cin*kh*kw], b [1, Cout]
    softmax_g,    // grouped softmax over contiguous blocks of k columns
    log_softmax_g,
    kl_g,         // KL(softmax(q) || softmax(p)) summed over groups -> [R,1]
    st_sample_g,  // straight-through one-hot sample per group
    stop_grad,
    concat_cols,
    slice_cols,
    sum_all,
    mean_all,
    sum_cols,     // [R,C] -> [R,1]
};

struct ConvMeta {
    int in_channels = 0, in_h = 0, in_w = 0;
    int out_channels = 0, kernel = 0, stride = 0;
    int out_h() const { return (in_h - kernel) / stride + 1; }
    int out_w() const { return (in_w - kernel) / stride + 1; }
};

struct Node {
    Op op = Op::leaf;
    int a = -1, b = -1, c = -1; // input node ids
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    bool needs_grad = false;     // any upstream leaf requires grad
    Parameter* param = nullptr;  // leaf bound to a parameter: grads flow back

    // op-specific attributes
    double s0 = 0.0, s1 = 0.0;   // scalars (scale/shift, eps, momentum)
    int i0 = 0, i1 = 0;          // ints (groups, classes, slice offsets)
    ConvMeta conv;
    Tensor* run_mean = nullptr;  // batch_norm running stats (train mode updates)
    Tensor* run_var = nullptr;
    bool train_mode = false;
    std::vector<double> scratch; // cached forward intermediates for backward
};

// Reverse-mode tape over dense matrices. Forward values are computed when an
// op is appended; backward() sweeps the tape once and accumulates gradients
// into bound Parameters.
class Graph {
public:
    explicit Graph(Precision prec = Precision::f64) : prec_(prec) {}

    Precision precision() const { return prec_; }
    size_t node_count() const { return nodes_.size(); }
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    // ---- leaves ----
    Value constant(int rows, int cols, const double* data);
    Value constant(const Tensor& t);
    Value constant_scalar(double v);
    Value zeros(int rows, int cols);
    // Leaf bound to a parameter; backward writes into p.g.
    Value param(Parameter& p);
    // Leaf with a local gradient request (inspectable, not parameter-bound).
    Value input_grad(const Tensor& t);

    // ---- elementwise / arithmetic ----
    Value add(Value a, Value b);
    Value add_row(Value a, Value row);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value affine(Value a, double mul, double shift); // a*mul + shift
    Value neg(Value a) { return affine(a, -1.0, 0.0); }
    Value relu(Value a);
    Value elu(Value a);
    Value sigmoid(Value a);
    Value tanh_fn(Value a);
    Value softplus(Value a);
    Value exp_fn(Value a);
    Value log_fn(Value a);
    Value square(Value a);

    // ---- linear algebra ----
    Value matmul(Value a, Value b);
    Value conv2d(Value x, Value w, Value b, const ConvMeta& meta);

    // ---- normalization ----
    Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);
    Value batch_norm(Value x, Value gain, Value bias, Tensor& run_mean, Tensor& run_var,
                     bool train, double eps = 1e-5, double momentum = 0.05);

    // ---- categorical ----
    Value softmax_groups(Value logits, int groups, int classes);
    Value log_softmax_groups(Value logits, int groups, int classes);
    Value kl_groups(Value q_logits, Value p_logits, int groups, int classes);
    Value straight_through_sample(Value logits, int groups, int classes, RngStream& rng);

    // ---- structure ----
    Value stop_gradient(Value a);
    Value concat_cols(Value a, Value b);
    Value slice_cols(Value a, int first, int count);
    Value sum_all(Value a);
    Value mean_all(Value a);
    Value sum_cols(Value a);

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse, accumulating
    // into Parameter::g for bound leaves. loss must be [1,1].
    void backward(Value loss);

    // Gradient buffer of a node (valid after backward when needs_grad).
    const std::vector<double>& grad_of(Value v) const { return nodes_[static_cast<size_t>(v.id)].grad; }

private:
    int push(Node&& n);
    Value make(Op op, int rows, int cols, int a = -1, int b = -1, int c = -1);
    void round_vec(std::vector<double>& v) {
        if (prec_ == Precision::f32)
            for (double& x : v) x = static_cast<double>(static_cast<float>(x));
    }

    void forward_node(Node& n);
    void backward_node(Node& n);

    Precision prec_;
    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, int> param_nodes_;
};

// Convenience: true if logits contain only finite entries.
bool all_finite(const std::vector<double>& v);

} // namespace latsched::substrate
