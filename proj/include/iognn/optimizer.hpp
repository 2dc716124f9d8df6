#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "autodiff.hpp"

namespace iognn {

enum class OptimizerKind { sgd, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-2;
    double momentum = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // L2 coefficient added to every gradient before the update

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("adam betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
        if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
    }
};

/// Per-parameter state, indexed like the parameter list it was built for.
class Optimizer {
public:
    Optimizer(std::vector<Parameter*> params, OptimizerConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        for (Parameter* p : params_) {
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    const OptimizerConfig& config() const noexcept { return cfg_; }
    std::size_t steps() const noexcept { return t_; }

    void zero_grad() {
        for (Parameter* p : params_) p->zero_grad();
    }

    /// g ← g + wd·w, then
    /// sgd:  v ← μv + g,  w ← w − ηv
    /// adam: bias-corrected first and second moments.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto w = params_[k]->value.values();
            auto g = params_[k]->grad.values();
            auto m = m_[k].values();
            auto v = v_[k].values();
            const double wd = cfg_.weight_decay;
            if (cfg_.kind == OptimizerKind::sgd) {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    m[i] = cfg_.momentum * m[i] + (g[i] + wd * w[i]);
                    w[i] -= cfg_.lr * m[i];
                }
            } else {
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const double gi = g[i] + wd * w[i];
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                    w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
                }
            }
        }
    }

private:
    std::vector<Parameter*> params_;
    OptimizerConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::size_t t_ = 0;
};

} // namespace iognn
