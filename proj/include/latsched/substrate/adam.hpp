#pragma once

#include "latsched/substrate/tensor.hpp"

#include <cmath>
#include <vector>

namespace latsched::substrate {

// Adaptive moment estimation with bias correction, optional global-norm
// gradient clipping and decoupled weight decay. Moments are kept by
// parameter index, so the optimizer is bound to one ParameterSet.
class Adam {
public:
    Adam(double lr, double clip_norm = 0.0, double weight_decay = 0.0,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), clip_(clip_norm), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    int64_t step_count() const { return t_; }

    // Applies one update from the accumulated gradients and clears them.
    // decay_mask[i] == false exempts parameter i from weight decay
    // (normalization gains/offsets); empty mask decays everything.
    void step(ParameterSet& ps, Precision prec = Precision::f64,
              const std::vector<bool>& decay_mask = {}) {
        ensure_state(ps);
        double scale = 1.0;
        if (clip_ > 0.0) {
            double sq = 0.0;
            for (size_t i = 0; i < ps.size(); ++i)
                for (double g : ps[i].g) sq += g * g;
            double norm = std::sqrt(sq);
            if (norm > clip_) scale = clip_ / norm;
        }
        ++t_;
        double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (size_t i = 0; i < ps.size(); ++i) {
            Parameter& p = ps[i];
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            bool decay = wd_ > 0.0 && (decay_mask.empty() || decay_mask[i]);
            for (size_t k = 0; k < p.v.size(); ++k) {
                double g = p.g[k] * scale;
                m[k] = b1_ * m[k] + (1.0 - b1_) * g;
                v[k] = b2_ * v[k] + (1.0 - b2_) * g * g;
                double mh = m[k] / c1;
                double vh = v[k] / c2;
                double upd = lr_ * mh / (std::sqrt(vh) + eps_);
                double val = p.v[k] - upd;
                if (decay) val -= lr_ * wd_ * p.v[k];
                p.v[k] = round_precision(val, prec);
                m[k] = round_precision(m[k], prec);
                v[k] = round_precision(v[k], prec);
            }
        }
        ps.zero_grads();
        ps.bump_version();
    }

private:
    void ensure_state(const ParameterSet& ps) {
        if (m_.size() == ps.size()) return;
        m_.resize(ps.size());
        v_.resize(ps.size());
        for (size_t i = 0; i < ps.size(); ++i) {
            if (m_[i].size() != ps[i].v.size()) {
                m_[i].assign(ps[i].v.size(), 0.0);
                v_[i].assign(ps[i].v.size(), 0.0);
            }
        }
    }

    double lr_, clip_, wd_, b1_, b2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace latsched::substrate
