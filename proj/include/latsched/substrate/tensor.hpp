#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace latsched::substrate {

// Values are stored as doubles in either precision mode. In f32 mode every
// op result is rounded through IEEE float, so numerics match a 32-bit
// pipeline while the code keeps a single path; f64 skips the rounding and is
// the mode used for gradient verification and bit-exact determinism checks.
enum class Precision { f32, f64 };

inline double round_precision(double v, Precision p) {
    return p == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Dense row-major matrix. Rank-0/1 data lives in [1,n] or [n,1].
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;
    bool requires_grad = false;
    std::vector<double> g; // same shape as v when gradients are tracked

    Tensor() = default;
    Tensor(int r, int c, bool rg = false)
        : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0), requires_grad(rg) {
        if (rg) g.assign(v.size(), 0.0);
    }

    size_t size() const { return v.size(); }
    double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

    void zero_grad() {
        if (requires_grad) g.assign(v.size(), 0.0);
    }
};

struct Parameter : Tensor {
    std::string name;
    Parameter() { requires_grad = true; }
    Parameter(std::string n, int r, int c) : Tensor(r, c, true), name(std::move(n)) {}
};

// Named collection of learnable tensors. The version counter increments on
// every optimizer update so freeze rules can be asserted cheaply.
class ParameterSet {
public:
    Parameter& add(const std::string& name, int rows, int cols) {
        if (index_of(name) >= 0) throw std::invalid_argument("duplicate parameter name: " + name);
        params_.push_back(std::make_unique<Parameter>(name, rows, cols));
        return *params_.back();
    }

    int index_of(const std::string& name) const {
        for (size_t i = 0; i < params_.size(); ++i)
            if (params_[i]->name == name) return static_cast<int>(i);
        return -1;
    }

    Parameter& operator[](size_t i) { return *params_[i]; }
    const Parameter& operator[](size_t i) const { return *params_[i]; }
    Parameter& by_name(const std::string& name) {
        int i = index_of(name);
        if (i < 0) throw std::out_of_range("no parameter named " + name);
        return *params_[static_cast<size_t>(i)];
    }

    size_t size() const { return params_.size(); }
    uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

    size_t element_count() const {
        size_t n = 0;
        for (auto& p : params_) n += p->size();
        return n;
    }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    uint64_t version_ = 0;
};

// Non-learnable persistent state (batch-norm running statistics).
class BufferSet {
public:
    Tensor& add(const std::string& name, int rows, int cols) {
        names_.push_back(name);
        bufs_.push_back(std::make_unique<Tensor>(rows, cols, false));
        return *bufs_.back();
    }
    size_t size() const { return bufs_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    Tensor& operator[](size_t i) { return *bufs_[i]; }
    const Tensor& operator[](size_t i) const { return *bufs_[i]; }

private:
    std::vector<std::string> names_;
    std::vector<std::unique_ptr<Tensor>> bufs_;
};

// target <- decay * target + (1 - decay) * online, elementwise.
void ema_update(ParameterSet& target, const ParameterSet& online, double decay);

} // namespace latsched::substrate
