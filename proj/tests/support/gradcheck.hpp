#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "metasysid/nncore.hpp"

namespace testsupport {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst;
    int checked = 0;
};

/// Richardson-extrapolated central differences on randomly sampled coordinates. `loss` must
/// evaluate without touching gradients. Analytic gradients are read from the
/// store as filled before the call.
inline GradCheckResult finite_difference_check(metasysid::nn::ParamStore<double>& store,
                                               const std::function<double()>& loss, int n_coords,
                                               std::uint64_t seed, double h = 1e-2) {
    std::vector<metasysid::nn::Parameter<double>*> params;
    for (auto& p : store) params.push_back(&p);
    std::mt19937_64 rng(seed);
    GradCheckResult out;
    // A pass over every parameter first so each one is covered, then random picks.
    for (int n = 0; n < n_coords; ++n) {
        auto* p = n < static_cast<int>(params.size())
                      ? params[static_cast<std::size_t>(n)]
                      : params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
        const auto idx = std::uniform_int_distribution<Eigen::Index>(0, p->value.size() - 1)(rng);
        double& x = p->value.data()[idx];
        const double saved = x;
        const auto central = [&](double step) {
            x = saved + step;
            const double lp = loss();
            x = saved - step;
            const double lm = loss();
            x = saved;
            return (lp - lm) / (2.0 * step);
        };
        const double numeric = (4.0 * central(h / 2) - central(h)) / 3.0;
        const double analytic = p->grad.data()[idx];
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
        const double rel = std::abs(numeric - analytic) / scale;
        if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst = p->name + "[" + std::to_string(idx) + "] analytic=" + std::to_string(analytic) +
                        " numeric=" + std::to_string(numeric);
        }
        ++out.checked;
    }
    return out;
}

}  // namespace testsupport
