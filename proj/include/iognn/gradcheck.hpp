#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "autodiff.hpp"

namespace iognn {

/// Builds the loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckOptions {
    double eps = 1e-5;
    std::size_t max_entries_per_param = 50;
    std::uint64_t seed = 0x5eed;
};

/// Compares reverse-mode gradients against central differences on at most
/// `max_entries_per_param` sampled entries of each parameter. Returns the
/// largest |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) seen.
inline double grad_check(const LossBuilder& loss_fn, std::span<Parameter* const> params,
                         const GradCheckOptions& opts = {}) {
    if (!(opts.eps > 0.0)) throw ParameterError("grad_check: eps must be positive");

    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Var loss = loss_fn(tape);
        if (!std::isfinite(loss.scalar())) throw NumericError("grad_check: non-finite loss at the base point");
        tape.backward(loss);
    }

    auto probe = [&]() {
        Tape tape;
        const double v = loss_fn(tape).scalar();
        if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss while probing");
        return v;
    };

    std::mt19937_64 rng(opts.seed);
    double worst = 0.0;
    for (Parameter* p : params) {
        std::vector<std::size_t> idx(p->value.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > opts.max_entries_per_param) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_entries_per_param);
        }
        auto w = p->value.values();
        for (std::size_t i : idx) {
            const double orig = w[i];
            w[i] = orig + opts.eps;
            const double fp = probe();
            w[i] = orig - opts.eps;
            const double fm = probe();
            w[i] = orig;
            const double g_fd = (fp - fm) / (2.0 * opts.eps);
            const double g_ad = p->grad.values()[i];
            const double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline double grad_check(const LossBuilder& loss_fn, std::initializer_list<Parameter*> params,
                         const GradCheckOptions& opts = {}) {
    std::vector<Parameter*> v(params);
    return grad_check(loss_fn, std::span<Parameter* const>(v), opts);
}

} // namespace iognn
