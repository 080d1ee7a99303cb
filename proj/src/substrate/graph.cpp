#include "latsched/substrate/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_map>

namespace latsched::substrate {

const std::vector<double>& Value::data() const { return graph->node(id).val; }

double Value::scalar() const {
    const Node& n = graph->node(id);
    if (n.val.size() != 1) throw std::logic_error("scalar() on non-scalar value");
    return n.val[0];
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

namespace {

// C[R,M] += A[R,K] * B[K,M], row-accumulation order. Each C element is
// accumulated sequentially, so results do not depend on blocking.
void gemm_acc(const double* a, const double* b, double* c, int R, int K, int M) {
    int i = 0;
    for (; i + 4 <= R; i += 4) {
        const double* a0 = a + static_cast<size_t>(i) * K;
        const double* a1 = a0 + K;
        const double* a2 = a1 + K;
        const double* a3 = a2 + K;
        double* c0 = c + static_cast<size_t>(i) * M;
        double* c1 = c0 + M;
        double* c2 = c1 + M;
        double* c3 = c2 + M;
        for (int k = 0; k < K; ++k) {
            const double* br = b + static_cast<size_t>(k) * M;
            double f0 = a0[k], f1 = a1[k], f2 = a2[k], f3 = a3[k];
            for (int j = 0; j < M; ++j) {
                double bj = br[j];
                c0[j] += f0 * bj;
                c1[j] += f1 * bj;
                c2[j] += f2 * bj;
                c3[j] += f3 * bj;
            }
        }
    }
    for (; i < R; ++i) {
        const double* ar = a + static_cast<size_t>(i) * K;
        double* cr = c + static_cast<size_t>(i) * M;
        for (int k = 0; k < K; ++k) {
            double f = ar[k];
            const double* br = b + static_cast<size_t>(k) * M;
            for (int j = 0; j < M; ++j) cr[j] += f * br[j];
        }
    }
}

std::vector<double> transpose(const double* m, int rows, int cols) {
    std::vector<double> t(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j) * rows + i] = m[static_cast<size_t>(i) * cols + j];
    return t;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// Grouped softmax for one row segment of `classes` logits.
void softmax_block(const double* in, double* out, int classes) {
    double mx = in[0];
    for (int k = 1; k < classes; ++k) mx = std::max(mx, in[k]);
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
        out[k] = std::exp(in[k] - mx);
        sum += out[k];
    }
    double inv = 1.0 / sum;
    for (int k = 0; k < classes; ++k) out[k] *= inv;
}

void log_softmax_block(const double* in, double* out, int classes) {
    double mx = in[0];
    for (int k = 1; k < classes; ++k) mx = std::max(mx, in[k]);
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += std::exp(in[k] - mx);
    double lse = mx + std::log(sum);
    for (int k = 0; k < classes; ++k) out[k] = in[k] - lse;
}

} // namespace

int Graph::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Value Graph::make(Op op, int rows, int cols, int a, int b, int c) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.rows = rows;
    n.cols = cols;
    n.val.assign(static_cast<size_t>(rows) * cols, 0.0);
    n.needs_grad = false;
    if (op != Op::stop_grad) {
        for (int in : {a, b, c})
            if (in >= 0 && nodes_[static_cast<size_t>(in)].needs_grad) n.needs_grad = true;
    }
    int id = push(std::move(n));
    return Value{this, id, rows, cols};
}

Value Graph::constant(int rows, int cols, const double* data) {
    Value v = make(Op::leaf, rows, cols);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    std::memcpy(n.val.data(), data, n.val.size() * sizeof(double));
    round_vec(n.val);
    return v;
}

Value Graph::constant(const Tensor& t) { return constant(t.rows, t.cols, t.v.data()); }

Value Graph::constant_scalar(double v) { return constant(1, 1, &v); }

Value Graph::zeros(int rows, int cols) { return make(Op::leaf, rows, cols); }

Value Graph::param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Value{this, it->second, p.rows, p.cols};
    Value v = make(Op::leaf, p.rows, p.cols);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    std::memcpy(n.val.data(), p.v.data(), n.val.size() * sizeof(double));
    round_vec(n.val);
    n.param = &p;
    n.needs_grad = true;
    param_nodes_.emplace(&p, v.id);
    return v;
}

Value Graph::input_grad(const Tensor& t) {
    Value v = constant(t);
    nodes_[static_cast<size_t>(v.id)].needs_grad = true;
    return v;
}

Value Graph::add(Value a, Value b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("add: shape mismatch");
    Value v = make(Op::add, a.rows, a.cols, a.id, b.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::add_row(Value a, Value row) {
    if (row.rows != 1 || row.cols != a.cols) throw std::invalid_argument("add_row: shape mismatch");
    Value v = make(Op::add_row, a.rows, a.cols, a.id, row.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::sub(Value a, Value b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("sub: shape mismatch");
    Value v = make(Op::sub, a.rows, a.cols, a.id, b.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::mul(Value a, Value b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("mul: shape mismatch");
    Value v = make(Op::mul, a.rows, a.cols, a.id, b.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::affine(Value a, double m, double s) {
    Value v = make(Op::scale, a.rows, a.cols, a.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.s0 = m;
    n.s1 = s;
    forward_node(n);
    return v;
}

#define UNARY_OP(NAME, OPENUM)                                    \
    Value Graph::NAME(Value a) {                                  \
        Value v = make(Op::OPENUM, a.rows, a.cols, a.id);         \
        forward_node(nodes_[static_cast<size_t>(v.id)]);          \
        return v;                                                 \
    }

UNARY_OP(relu, relu)
UNARY_OP(elu, elu)
UNARY_OP(sigmoid, sigmoid)
UNARY_OP(tanh_fn, tanh_fn)
UNARY_OP(softplus, softplus)
UNARY_OP(exp_fn, exp_fn)
UNARY_OP(log_fn, log_fn)
UNARY_OP(square, square)
#undef UNARY_OP

Value Graph::matmul(Value a, Value b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
    Value v = make(Op::matmul, a.rows, b.cols, a.id, b.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::conv2d(Value x, Value w, Value b, const ConvMeta& meta) {
    int in_size = meta.in_channels * meta.in_h * meta.in_w;
    if (x.cols != in_size) throw std::invalid_argument("conv2d: input size mismatch");
    int ck = meta.in_channels * meta.kernel * meta.kernel;
    if (w.rows != meta.out_channels || w.cols != ck) throw std::invalid_argument("conv2d: weight shape mismatch");
    if (b.rows != 1 || b.cols != meta.out_channels) throw std::invalid_argument("conv2d: bias shape mismatch");
    int out_size = meta.out_channels * meta.out_h() * meta.out_w();
    Value v = make(Op::conv2d, x.rows, out_size, x.id, w.id, b.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.conv = meta;
    forward_node(n);
    return v;
}

Value Graph::layer_norm(Value x, Value gain, Value bias, double eps) {
    if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
        throw std::invalid_argument("layer_norm: affine shape mismatch");
    Value v = make(Op::layer_norm, x.rows, x.cols, x.id, gain.id, bias.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.s0 = eps;
    forward_node(n);
    return v;
}

Value Graph::batch_norm(Value x, Value gain, Value bias, Tensor& run_mean, Tensor& run_var,
                        bool train, double eps, double momentum) {
    if (gain.rows != 1 || gain.cols != x.cols || bias.rows != 1 || bias.cols != x.cols)
        throw std::invalid_argument("batch_norm: affine shape mismatch");
    if (run_mean.cols != x.cols || run_var.cols != x.cols)
        throw std::invalid_argument("batch_norm: running stat shape mismatch");
    if (train && x.rows < 2)
        throw std::invalid_argument("batch_norm: training mode needs batch size >= 2");
    Value v = make(Op::batch_norm, x.rows, x.cols, x.id, gain.id, bias.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.s0 = eps;
    n.s1 = momentum;
    n.run_mean = &run_mean;
    n.run_var = &run_var;
    n.train_mode = train;
    forward_node(n);
    return v;
}

Value Graph::softmax_groups(Value logits, int groups, int classes) {
    if (logits.cols != groups * classes) throw std::invalid_argument("softmax_groups: shape mismatch");
    Value v = make(Op::softmax_g, logits.rows, logits.cols, logits.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.i0 = groups;
    n.i1 = classes;
    forward_node(n);
    return v;
}

Value Graph::log_softmax_groups(Value logits, int groups, int classes) {
    if (logits.cols != groups * classes) throw std::invalid_argument("log_softmax_groups: shape mismatch");
    Value v = make(Op::log_softmax_g, logits.rows, logits.cols, logits.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.i0 = groups;
    n.i1 = classes;
    forward_node(n);
    return v;
}

Value Graph::kl_groups(Value q_logits, Value p_logits, int groups, int classes) {
    if (q_logits.rows != p_logits.rows || q_logits.cols != p_logits.cols)
        throw std::invalid_argument("kl_groups: shape mismatch");
    if (q_logits.cols != groups * classes) throw std::invalid_argument("kl_groups: group layout mismatch");
    if (!all_finite(nodes_[static_cast<size_t>(q_logits.id)].val) ||
        !all_finite(nodes_[static_cast<size_t>(p_logits.id)].val))
        throw std::invalid_argument("kl_groups: non-finite logits");
    Value v = make(Op::kl_g, q_logits.rows, 1, q_logits.id, p_logits.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.i0 = groups;
    n.i1 = classes;
    forward_node(n);
    return v;
}

Value Graph::straight_through_sample(Value logits, int groups, int classes, RngStream& rng) {
    if (logits.cols != groups * classes) throw std::invalid_argument("straight_through_sample: shape mismatch");
    if (!all_finite(nodes_[static_cast<size_t>(logits.id)].val))
        throw std::invalid_argument("straight_through_sample: non-finite logits");
    Value v = make(Op::st_sample_g, logits.rows, logits.cols, logits.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.i0 = groups;
    n.i1 = classes;
    // sample during forward using the caller's stream
    const Node& in = nodes_[static_cast<size_t>(n.a)];
    n.scratch.assign(in.val.size(), 0.0);
    int C = logits.cols;
    for (int r = 0; r < logits.rows; ++r) {
        const double* src = in.val.data() + static_cast<size_t>(r) * C;
        double* probs = n.scratch.data() + static_cast<size_t>(r) * C;
        double* out = n.val.data() + static_cast<size_t>(r) * C;
        for (int g = 0; g < groups; ++g) {
            softmax_block(src + g * classes, probs + g * classes, classes);
            double u = rng.uniform();
            double cum = 0.0;
            int pick = classes - 1;
            for (int k = 0; k < classes; ++k) {
                cum += probs[g * classes + k];
                if (u < cum) {
                    pick = k;
                    break;
                }
            }
            out[g * classes + pick] = 1.0;
        }
    }
    return v;
}

Value Graph::stop_gradient(Value a) {
    Value v = make(Op::stop_grad, a.rows, a.cols, a.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::concat_cols(Value a, Value b) {
    if (a.rows != b.rows) throw std::invalid_argument("concat_cols: row mismatch");
    Value v = make(Op::concat_cols, a.rows, a.cols + b.cols, a.id, b.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::slice_cols(Value a, int first, int count) {
    if (first < 0 || count <= 0 || first + count > a.cols) throw std::invalid_argument("slice_cols: out of range");
    Value v = make(Op::slice_cols, a.rows, count, a.id);
    Node& n = nodes_[static_cast<size_t>(v.id)];
    n.i0 = first;
    forward_node(n);
    return v;
}

Value Graph::sum_all(Value a) {
    Value v = make(Op::sum_all, 1, 1, a.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::mean_all(Value a) {
    Value v = make(Op::mean_all, 1, 1, a.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

Value Graph::sum_cols(Value a) {
    Value v = make(Op::sum_cols, a.rows, 1, a.id);
    forward_node(nodes_[static_cast<size_t>(v.id)]);
    return v;
}

void Graph::forward_node(Node& n) {
    const Node* A = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
    const Node* B = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
    const Node* C = n.c >= 0 ? &nodes_[static_cast<size_t>(n.c)] : nullptr;
    size_t sz = n.val.size();
    switch (n.op) {
        case Op::leaf:
            break;
        case Op::add:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] + B->val[i];
            break;
        case Op::add_row:
            for (int r = 0; r < n.rows; ++r) {
                const double* ar = A->val.data() + static_cast<size_t>(r) * n.cols;
                double* out = n.val.data() + static_cast<size_t>(r) * n.cols;
                for (int j = 0; j < n.cols; ++j) out[j] = ar[j] + B->val[static_cast<size_t>(j)];
            }
            break;
        case Op::sub:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] - B->val[i];
            break;
        case Op::mul:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] * B->val[i];
            break;
        case Op::scale:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] * n.s0 + n.s1;
            break;
        case Op::matmul:
            gemm_acc(A->val.data(), B->val.data(), n.val.data(), A->rows, A->cols, B->cols);
            break;
        case Op::relu:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] > 0.0 ? A->val[i] : 0.0;
            break;
        case Op::elu:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] > 0.0 ? A->val[i] : std::expm1(A->val[i]);
            break;
        case Op::sigmoid:
            for (size_t i = 0; i < sz; ++i) n.val[i] = stable_sigmoid(A->val[i]);
            break;
        case Op::tanh_fn:
            for (size_t i = 0; i < sz; ++i) n.val[i] = std::tanh(A->val[i]);
            break;
        case Op::softplus:
            for (size_t i = 0; i < sz; ++i) {
                double x = A->val[i];
                n.val[i] = x > 30.0 ? x : std::log1p(std::exp(x));
            }
            break;
        case Op::exp_fn:
            for (size_t i = 0; i < sz; ++i) n.val[i] = std::exp(A->val[i]);
            break;
        case Op::log_fn:
            for (size_t i = 0; i < sz; ++i) n.val[i] = std::log(A->val[i]);
            break;
        case Op::square:
            for (size_t i = 0; i < sz; ++i) n.val[i] = A->val[i] * A->val[i];
            break;
        case Op::layer_norm: {
            int Cc = n.cols;
            n.scratch.assign(sz + static_cast<size_t>(n.rows), 0.0); // xhat + inv per row
            double* xhat = n.scratch.data();
            double* inv = n.scratch.data() + sz;
            for (int r = 0; r < n.rows; ++r) {
                const double* x = A->val.data() + static_cast<size_t>(r) * Cc;
                double mean = 0.0;
                for (int j = 0; j < Cc; ++j) mean += x[j];
                mean /= Cc;
                double var = 0.0;
                for (int j = 0; j < Cc; ++j) {
                    double d = x[j] - mean;
                    var += d * d;
                }
                var /= Cc;
                double iv = 1.0 / std::sqrt(var + n.s0);
                inv[r] = iv;
                double* xh = xhat + static_cast<size_t>(r) * Cc;
                double* out = n.val.data() + static_cast<size_t>(r) * Cc;
                for (int j = 0; j < Cc; ++j) {
                    xh[j] = (x[j] - mean) * iv;
                    out[j] = xh[j] * B->val[static_cast<size_t>(j)] + C->val[static_cast<size_t>(j)];
                }
            }
            break;
        }
        case Op::batch_norm: {
            int Cc = n.cols;
            int R = n.rows;
            n.scratch.assign(sz + static_cast<size_t>(Cc), 0.0); // xhat + inv per column
            double* xhat = n.scratch.data();
            double* inv = n.scratch.data() + sz;
            for (int j = 0; j < Cc; ++j) {
                double mean, var;
                if (n.train_mode) {
                    mean = 0.0;
                    for (int r = 0; r < R; ++r) mean += A->val[static_cast<size_t>(r) * Cc + j];
                    mean /= R;
                    var = 0.0;
                    for (int r = 0; r < R; ++r) {
                        double d = A->val[static_cast<size_t>(r) * Cc + j] - mean;
                        var += d * d;
                    }
                    var /= R;
                    n.run_mean->v[static_cast<size_t>(j)] =
                        round_precision((1.0 - n.s1) * n.run_mean->v[static_cast<size_t>(j)] + n.s1 * mean, prec_);
                    n.run_var->v[static_cast<size_t>(j)] =
                        round_precision((1.0 - n.s1) * n.run_var->v[static_cast<size_t>(j)] + n.s1 * var, prec_);
                } else {
                    mean = n.run_mean->v[static_cast<size_t>(j)];
                    var = n.run_var->v[static_cast<size_t>(j)];
                }
                double iv = 1.0 / std::sqrt(var + n.s0);
                inv[j] = iv;
                for (int r = 0; r < R; ++r) {
                    size_t idx = static_cast<size_t>(r) * Cc + j;
                    xhat[idx] = (A->val[idx] - mean) * iv;
                    n.val[idx] = xhat[idx] * B->val[static_cast<size_t>(j)] + C->val[static_cast<size_t>(j)];
                }
            }
            break;
        }
        case Op::conv2d: {
            const ConvMeta& m = n.conv;
            int oh = m.out_h(), ow = m.out_w();
            int ohw = oh * ow;
            int ck = m.in_channels * m.kernel * m.kernel;
            int Bn = A->rows;
            n.scratch.assign(static_cast<size_t>(Bn) * ohw * ck, 0.0); // im2col cache
            std::vector<double> wt = transpose(B->val.data(), B->rows, B->cols); // [ck, Cout]
            std::vector<double> y2(static_cast<size_t>(ohw) * m.out_channels);
            for (int bi = 0; bi < Bn; ++bi) {
                const double* x = A->val.data() + static_cast<size_t>(bi) * A->cols;
                double* col = n.scratch.data() + static_cast<size_t>(bi) * ohw * ck;
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        double* crow = col + (static_cast<size_t>(oy) * ow + ox) * ck;
                        int iy0 = oy * m.stride, ix0 = ox * m.stride;
                        int idx = 0;
                        for (int ci = 0; ci < m.in_channels; ++ci) {
                            const double* plane = x + static_cast<size_t>(ci) * m.in_h * m.in_w;
                            for (int ky = 0; ky < m.kernel; ++ky) {
                                const double* rowp = plane + static_cast<size_t>(iy0 + ky) * m.in_w + ix0;
                                for (int kx = 0; kx < m.kernel; ++kx) crow[idx++] = rowp[kx];
                            }
                        }
                    }
                std::fill(y2.begin(), y2.end(), 0.0);
                gemm_acc(col, wt.data(), y2.data(), ohw, ck, m.out_channels);
                double* out = n.val.data() + static_cast<size_t>(bi) * n.cols;
                for (int o = 0; o < ohw; ++o)
                    for (int co = 0; co < m.out_channels; ++co)
                        out[static_cast<size_t>(co) * ohw + o] =
                            y2[static_cast<size_t>(o) * m.out_channels + co] + C->val[static_cast<size_t>(co)];
            }
            break;
        }
        case Op::softmax_g:
            for (int r = 0; r < n.rows; ++r)
                for (int g = 0; g < n.i0; ++g) {
                    size_t off = static_cast<size_t>(r) * n.cols + static_cast<size_t>(g) * n.i1;
                    softmax_block(A->val.data() + off, n.val.data() + off, n.i1);
                }
            break;
        case Op::log_softmax_g:
            for (int r = 0; r < n.rows; ++r)
                for (int g = 0; g < n.i0; ++g) {
                    size_t off = static_cast<size_t>(r) * n.cols + static_cast<size_t>(g) * n.i1;
                    log_softmax_block(A->val.data() + off, n.val.data() + off, n.i1);
                }
            break;
        case Op::kl_g: {
            // scratch: q probs, p probs, (log q - log p)
            size_t len = A->val.size();
            n.scratch.assign(3 * len, 0.0);
            double* q = n.scratch.data();
            double* p = n.scratch.data() + len;
            double* d = n.scratch.data() + 2 * len;
            std::vector<double> lq(static_cast<size_t>(n.i1)), lp(static_cast<size_t>(n.i1));
            for (int r = 0; r < n.rows; ++r) {
                double total = 0.0;
                for (int g = 0; g < n.i0; ++g) {
                    size_t off = static_cast<size_t>(r) * A->cols + static_cast<size_t>(g) * n.i1;
                    softmax_block(A->val.data() + off, q + off, n.i1);
                    softmax_block(B->val.data() + off, p + off, n.i1);
                    log_softmax_block(A->val.data() + off, lq.data(), n.i1);
                    log_softmax_block(B->val.data() + off, lp.data(), n.i1);
                    for (int k = 0; k < n.i1; ++k) {
                        d[off + k] = lq[static_cast<size_t>(k)] - lp[static_cast<size_t>(k)];
                        total += q[off + k] * d[off + k];
                    }
                }
                n.val[static_cast<size_t>(r)] = total;
            }
            break;
        }
        case Op::st_sample_g:
            break; // sampled at construction
        case Op::stop_grad:
            n.val = A->val;
            break;
        case Op::concat_cols:
            for (int r = 0; r < n.rows; ++r) {
                double* out = n.val.data() + static_cast<size_t>(r) * n.cols;
                std::memcpy(out, A->val.data() + static_cast<size_t>(r) * A->cols,
                            static_cast<size_t>(A->cols) * sizeof(double));
                std::memcpy(out + A->cols, B->val.data() + static_cast<size_t>(r) * B->cols,
                            static_cast<size_t>(B->cols) * sizeof(double));
            }
            break;
        case Op::slice_cols:
            for (int r = 0; r < n.rows; ++r)
                std::memcpy(n.val.data() + static_cast<size_t>(r) * n.cols,
                            A->val.data() + static_cast<size_t>(r) * A->cols + n.i0,
                            static_cast<size_t>(n.cols) * sizeof(double));
            break;
        case Op::sum_all: {
            double s = 0.0;
            for (double x : A->val) s += x;
            n.val[0] = s;
            break;
        }
        case Op::mean_all: {
            double s = 0.0;
            for (double x : A->val) s += x;
            n.val[0] = s / static_cast<double>(A->val.size());
            break;
        }
        case Op::sum_cols:
            for (int r = 0; r < n.rows; ++r) {
                const double* ar = A->val.data() + static_cast<size_t>(r) * A->cols;
                double s = 0.0;
                for (int j = 0; j < A->cols; ++j) s += ar[j];
                n.val[static_cast<size_t>(r)] = s;
            }
            break;
    }
    round_vec(n.val);
}

namespace {
void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
}
} // namespace

void Graph::backward_node(Node& n) {
    Node* A = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
    Node* B = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
    Node* C = n.c >= 0 ? &nodes_[static_cast<size_t>(n.c)] : nullptr;
    auto wantA = [&] { return A && A->needs_grad; };
    auto wantB = [&] { return B && B->needs_grad; };
    auto wantC = [&] { return C && C->needs_grad; };
    size_t sz = n.val.size();
    switch (n.op) {
        case Op::leaf:
        case Op::stop_grad:
            break;
        case Op::add:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i];
            }
            if (wantB()) {
                ensure_grad(*B);
                for (size_t i = 0; i < sz; ++i) B->grad[i] += n.grad[i];
            }
            break;
        case Op::add_row:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i];
            }
            if (wantB()) {
                ensure_grad(*B);
                for (int r = 0; r < n.rows; ++r) {
                    const double* g = n.grad.data() + static_cast<size_t>(r) * n.cols;
                    for (int j = 0; j < n.cols; ++j) B->grad[static_cast<size_t>(j)] += g[j];
                }
            }
            break;
        case Op::sub:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i];
            }
            if (wantB()) {
                ensure_grad(*B);
                for (size_t i = 0; i < sz; ++i) B->grad[i] -= n.grad[i];
            }
            break;
        case Op::mul:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * B->val[i];
            }
            if (wantB()) {
                ensure_grad(*B);
                for (size_t i = 0; i < sz; ++i) B->grad[i] += n.grad[i] * A->val[i];
            }
            break;
        case Op::scale:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * n.s0;
            }
            break;
        case Op::matmul:
            // dA += dC * B^T ; dB += A^T * dC
            if (wantA()) {
                ensure_grad(*A);
                std::vector<double> bt = transpose(B->val.data(), B->rows, B->cols);
                gemm_acc(n.grad.data(), bt.data(), A->grad.data(), n.rows, n.cols, A->cols);
            }
            if (wantB()) {
                ensure_grad(*B);
                for (int i = 0; i < A->rows; ++i) {
                    const double* arow = A->val.data() + static_cast<size_t>(i) * A->cols;
                    const double* grow = n.grad.data() + static_cast<size_t>(i) * n.cols;
                    for (int k = 0; k < A->cols; ++k) {
                        double f = arow[k];
                        if (f == 0.0) continue;
                        double* brow = B->grad.data() + static_cast<size_t>(k) * B->cols;
                        for (int j = 0; j < n.cols; ++j) brow[j] += f * grow[j];
                    }
                }
            }
            break;
        case Op::relu:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i)
                    if (A->val[i] > 0.0) A->grad[i] += n.grad[i];
            }
            break;
        case Op::elu:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i)
                    A->grad[i] += n.grad[i] * (A->val[i] > 0.0 ? 1.0 : n.val[i] + 1.0);
            }
            break;
        case Op::sigmoid:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * n.val[i] * (1.0 - n.val[i]);
            }
            break;
        case Op::tanh_fn:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * (1.0 - n.val[i] * n.val[i]);
            }
            break;
        case Op::softplus:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * stable_sigmoid(A->val[i]);
            }
            break;
        case Op::exp_fn:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * n.val[i];
            }
            break;
        case Op::log_fn:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] / A->val[i];
            }
            break;
        case Op::square:
            if (wantA()) {
                ensure_grad(*A);
                for (size_t i = 0; i < sz; ++i) A->grad[i] += n.grad[i] * 2.0 * A->val[i];
            }
            break;
        case Op::layer_norm: {
            int Cc = n.cols;
            const double* xhat = n.scratch.data();
            const double* inv = n.scratch.data() + sz;
            if (wantB()) ensure_grad(*B);
            if (wantC()) ensure_grad(*C);
            if (wantA()) ensure_grad(*A);
            for (int r = 0; r < n.rows; ++r) {
                const double* g = n.grad.data() + static_cast<size_t>(r) * Cc;
                const double* xh = xhat + static_cast<size_t>(r) * Cc;
                if (wantB())
                    for (int j = 0; j < Cc; ++j) B->grad[static_cast<size_t>(j)] += g[j] * xh[j];
                if (wantC())
                    for (int j = 0; j < Cc; ++j) C->grad[static_cast<size_t>(j)] += g[j];
                if (wantA()) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < Cc; ++j) {
                        double gg = g[j] * B->val[static_cast<size_t>(j)];
                        m1 += gg;
                        m2 += gg * xh[j];
                    }
                    m1 /= Cc;
                    m2 /= Cc;
                    double* ag = A->grad.data() + static_cast<size_t>(r) * Cc;
                    for (int j = 0; j < Cc; ++j) {
                        double gg = g[j] * B->val[static_cast<size_t>(j)];
                        ag[j] += (gg - m1 - xh[j] * m2) * inv[r];
                    }
                }
            }
            break;
        }
        case Op::batch_norm: {
            int Cc = n.cols;
            int R = n.rows;
            const double* xhat = n.scratch.data();
            const double* inv = n.scratch.data() + sz;
            if (wantB()) ensure_grad(*B);
            if (wantC()) ensure_grad(*C);
            if (wantA()) ensure_grad(*A);
            for (int j = 0; j < Cc; ++j) {
                double dg = 0.0, db = 0.0;
                for (int r = 0; r < R; ++r) {
                    size_t idx = static_cast<size_t>(r) * Cc + j;
                    dg += n.grad[idx] * xhat[idx];
                    db += n.grad[idx];
                }
                if (wantB()) B->grad[static_cast<size_t>(j)] += dg;
                if (wantC()) C->grad[static_cast<size_t>(j)] += db;
                if (wantA()) {
                    double gamma = B->val[static_cast<size_t>(j)];
                    if (n.train_mode) {
                        double m1 = db / R, m2 = dg / R;
                        for (int r = 0; r < R; ++r) {
                            size_t idx = static_cast<size_t>(r) * Cc + j;
                            A->grad[idx] += gamma * inv[j] * (n.grad[idx] - m1 - xhat[idx] * m2);
                        }
                    } else {
                        for (int r = 0; r < R; ++r) {
                            size_t idx = static_cast<size_t>(r) * Cc + j;
                            A->grad[idx] += gamma * inv[j] * n.grad[idx];
                        }
                    }
                }
            }
            break;
        }
        case Op::conv2d: {
            const ConvMeta& m = n.conv;
            int oh = m.out_h(), ow = m.out_w();
            int ohw = oh * ow;
            int ck = m.in_channels * m.kernel * m.kernel;
            int Bn = A->rows;
            if (wantA()) ensure_grad(*A);
            if (wantB()) ensure_grad(*B);
            if (wantC()) ensure_grad(*C);
            std::vector<double> dy2(static_cast<size_t>(ohw) * m.out_channels);
            std::vector<double> dcol(static_cast<size_t>(ohw) * ck);
            for (int bi = 0; bi < Bn; ++bi) {
                const double* g = n.grad.data() + static_cast<size_t>(bi) * n.cols;
                for (int o = 0; o < ohw; ++o)
                    for (int co = 0; co < m.out_channels; ++co)
                        dy2[static_cast<size_t>(o) * m.out_channels + co] = g[static_cast<size_t>(co) * ohw + o];
                const double* col = n.scratch.data() + static_cast<size_t>(bi) * ohw * ck;
                if (wantC())
                    for (int o = 0; o < ohw; ++o)
                        for (int co = 0; co < m.out_channels; ++co)
                            C->grad[static_cast<size_t>(co)] += dy2[static_cast<size_t>(o) * m.out_channels + co];
                if (wantB())
                    for (int o = 0; o < ohw; ++o) {
                        const double* dyr = dy2.data() + static_cast<size_t>(o) * m.out_channels;
                        const double* cr = col + static_cast<size_t>(o) * ck;
                        for (int co = 0; co < m.out_channels; ++co) {
                            double f = dyr[co];
                            if (f == 0.0) continue;
                            double* wrow = B->grad.data() + static_cast<size_t>(co) * ck;
                            for (int k = 0; k < ck; ++k) wrow[k] += f * cr[k];
                        }
                    }
                if (wantA()) {
                    std::fill(dcol.begin(), dcol.end(), 0.0);
                    gemm_acc(dy2.data(), B->val.data(), dcol.data(), ohw, m.out_channels, ck);
                    double* xg = A->grad.data() + static_cast<size_t>(bi) * A->cols;
                    for (int oy = 0; oy < oh; ++oy)
                        for (int ox = 0; ox < ow; ++ox) {
                            const double* crow = dcol.data() + (static_cast<size_t>(oy) * ow + ox) * ck;
                            int iy0 = oy * m.stride, ix0 = ox * m.stride;
                            int idx = 0;
                            for (int ci = 0; ci < m.in_channels; ++ci) {
                                double* plane = xg + static_cast<size_t>(ci) * m.in_h * m.in_w;
                                for (int ky = 0; ky < m.kernel; ++ky) {
                                    double* rowp = plane + static_cast<size_t>(iy0 + ky) * m.in_w + ix0;
                                    for (int kx = 0; kx < m.kernel; ++kx) rowp[kx] += crow[idx++];
                                }
                            }
                        }
                }
            }
            break;
        }
        case Op::softmax_g:
        case Op::st_sample_g: {
            // straight-through: gradient as if the output were softmax(logits)
            if (!wantA()) break;
            ensure_grad(*A);
            const double* probs = n.op == Op::softmax_g ? n.val.data() : n.scratch.data();
            for (int r = 0; r < n.rows; ++r)
                for (int g = 0; g < n.i0; ++g) {
                    size_t off = static_cast<size_t>(r) * n.cols + static_cast<size_t>(g) * n.i1;
                    const double* s = probs + off;
                    const double* gy = n.grad.data() + off;
                    double dot = 0.0;
                    for (int k = 0; k < n.i1; ++k) dot += gy[k] * s[k];
                    for (int k = 0; k < n.i1; ++k) A->grad[off + k] += s[k] * (gy[k] - dot);
                }
            break;
        }
        case Op::log_softmax_g:
            if (wantA()) {
                ensure_grad(*A);
                for (int r = 0; r < n.rows; ++r)
                    for (int g = 0; g < n.i0; ++g) {
                        size_t off = static_cast<size_t>(r) * n.cols + static_cast<size_t>(g) * n.i1;
                        const double* ls = n.val.data() + off;
                        const double* gy = n.grad.data() + off;
                        double gsum = 0.0;
                        for (int k = 0; k < n.i1; ++k) gsum += gy[k];
                        for (int k = 0; k < n.i1; ++k) A->grad[off + k] += gy[k] - std::exp(ls[k]) * gsum;
                    }
            }
            break;
        case Op::kl_g: {
            size_t len = A->val.size();
            const double* q = n.scratch.data();
            const double* p = n.scratch.data() + len;
            const double* d = n.scratch.data() + 2 * len;
            if (wantA()) ensure_grad(*A);
            if (wantB()) ensure_grad(*B);
            for (int r = 0; r < n.rows; ++r) {
                double go = n.grad[static_cast<size_t>(r)];
                if (go == 0.0) continue;
                for (int g = 0; g < n.i0; ++g) {
                    size_t off = static_cast<size_t>(r) * A->cols + static_cast<size_t>(g) * n.i1;
                    if (wantA()) {
                        double klg = 0.0;
                        for (int k = 0; k < n.i1; ++k) klg += q[off + k] * d[off + k];
                        for (int k = 0; k < n.i1; ++k) A->grad[off + k] += go * q[off + k] * (d[off + k] - klg);
                    }
                    if (wantB())
                        for (int k = 0; k < n.i1; ++k) B->grad[off + k] += go * (p[off + k] - q[off + k]);
                }
            }
            break;
        }
        case Op::concat_cols:
            if (wantA()) {
                ensure_grad(*A);
                for (int r = 0; r < n.rows; ++r) {
                    const double* g = n.grad.data() + static_cast<size_t>(r) * n.cols;
                    double* ag = A->grad.data() + static_cast<size_t>(r) * A->cols;
                    for (int j = 0; j < A->cols; ++j) ag[j] += g[j];
                }
            }
            if (wantB()) {
                ensure_grad(*B);
                for (int r = 0; r < n.rows; ++r) {
                    const double* g = n.grad.data() + static_cast<size_t>(r) * n.cols + A->cols;
                    double* bg = B->grad.data() + static_cast<size_t>(r) * B->cols;
                    for (int j = 0; j < B->cols; ++j) bg[j] += g[j];
                }
            }
            break;
        case Op::slice_cols:
            if (wantA()) {
                ensure_grad(*A);
                for (int r = 0; r < n.rows; ++r) {
                    const double* g = n.grad.data() + static_cast<size_t>(r) * n.cols;
                    double* ag = A->grad.data() + static_cast<size_t>(r) * A->cols + n.i0;
                    for (int j = 0; j < n.cols; ++j) ag[j] += g[j];
                }
            }
            break;
        case Op::sum_all:
            if (wantA()) {
                ensure_grad(*A);
                double g = n.grad[0];
                for (size_t i = 0; i < A->grad.size(); ++i) A->grad[i] += g;
            }
            break;
        case Op::mean_all:
            if (wantA()) {
                ensure_grad(*A);
                double g = n.grad[0] / static_cast<double>(A->val.size());
                for (size_t i = 0; i < A->grad.size(); ++i) A->grad[i] += g;
            }
            break;
        case Op::sum_cols:
            if (wantA()) {
                ensure_grad(*A);
                for (int r = 0; r < n.rows; ++r) {
                    double g = n.grad[static_cast<size_t>(r)];
                    double* ag = A->grad.data() + static_cast<size_t>(r) * A->cols;
                    for (int j = 0; j < A->cols; ++j) ag[j] += g;
                }
            }
            break;
    }
}

void Graph::backward(Value loss) {
    Node& root = nodes_[static_cast<size_t>(loss.id)];
    if (root.val.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    ensure_grad(root);
    root.grad[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        backward_node(n);
    }
    if (prec_ == Precision::f32) {
        for (Node& n : nodes_)
            if (!n.grad.empty()) round_vec(n.grad);
    }
    for (auto& [p, id] : param_nodes_) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty()) continue;
        for (size_t i = 0; i < n.grad.size(); ++i)
            p->g[i] = round_precision(p->g[i] + n.grad[i], prec_);
    }
}

void ema_update(ParameterSet& target, const ParameterSet& online, double decay) {
    if (decay < 0.0 || decay > 1.0) throw std::invalid_argument("ema_update: decay outside [0,1]");
    if (target.size() != online.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
    for (size_t i = 0; i < target.size(); ++i) {
        Parameter& t = target[i];
        const Parameter& o = online[i];
        if (t.name != o.name || t.rows != o.rows || t.cols != o.cols)
            throw std::invalid_argument("ema_update: name/shape mismatch at " + t.name);
        for (size_t k = 0; k < t.v.size(); ++k) t.v[k] = decay * t.v[k] + (1.0 - decay) * o.v[k];
    }
    target.bump_version();
}

} // namespace latsched::substrate
