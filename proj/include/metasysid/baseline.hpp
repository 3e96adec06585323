#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "metasysid/sysgen.hpp"

namespace metasysid::baseline {

/// y_k = sum_i a_i y_{k-i} + sum_j b_j u_{k-nk-j+1} + c, i = 1..na, j = 1..nb.
struct ArxModel {
    int na = 0;
    int nb = 0;
    int nk = 1;  // input delay; 0 admits direct feedthrough
    Eigen::VectorXd a;
    Eigen::VectorXd b;
    double c = 0.0;  // intercept, zero unless fitted
};

inline constexpr double kArxRidge = 1e-8;

struct ArxFitOptions {
    int nk = 1;
    double ridge = kArxRidge;
    bool intercept = false;  // normalized data carry a constant offset
};

/// Least-squares ARX fit via ridge-regularized normal equations over the
/// steps k >= max(na, nk + nb - 1). Requires m > na + nb + 1.
/// Throws SingularFitError if the regularized system cannot be solved.
ArxModel fit_arx_ls(std::span<const double> u, std::span<const double> y, int na, int nb,
                    const ArxFitOptions& opts = {});

/// Regression matrix and target of the ARX fit.
void arx_regression(std::span<const double> u, std::span<const double> y, int na, int nb,
                    const ArxFitOptions& opts, Eigen::MatrixXd& phi, Eigen::VectorXd& target);

/// One-step predictions using measured past outputs; samples before the start
/// count as zero.
std::vector<double> arx_predict(const ArxModel& model, std::span<const double> u, std::span<const double> y);

/// Free-run simulation over the query, seeded with the tail of the context.
std::vector<double> arx_simulate(const ArxModel& model, std::span<const double> u_context,
                                 std::span<const double> y_context, std::span<const double> u_query);

struct MarkovEstimate {
    Eigen::VectorXd h;    // h_0..h_L
    double offset = 0.0;  // constant term (zero unless fitted)
};

/// Least-squares FIR fit y_k ~ sum_{j=0..L} h_j u_{k-j}, with inputs before the
/// record taken as zero (the data start from rest). Requires m >= 5 L and
/// m > L + 1. With `fit_offset` a constant term is estimated alongside.
MarkovEstimate estimate_markov_ls(std::span<const double> u, std::span<const double> y, int L,
                                  bool fit_offset = false);

/// Singular values of the Hankel matrix built from h_1..h_L.
Eigen::VectorXd hankel_singular_values(const Eigen::VectorXd& h);

/// Order at the largest log-ratio gap between consecutive singular values,
/// searched over 1..min(max_order, count - 1).
int select_order(const Eigen::VectorXd& singular_values, int max_order = 10);

/// Ho-Kalman realization of order r from h_0..h_L (D = h_0).
/// Requires L >= 2r; throws RankError (with the numerical rank as suggestion)
/// when the Hankel matrix has rank below r.
sysgen::LtiSystem ho_kalman(const Eigen::VectorXd& h, int r);

/// Impulse response h_0..h_n of a realized system.
Eigen::VectorXd impulse_response(const sysgen::LtiSystem& sys, int n);

struct SubspaceOptions {
    int order = 0;          // 0: chosen by the Hankel gap
    int max_order = 10;
    int markov_length = 0;  // 0: min(100, m / 5)
    int state_window = 50;  // last context samples used to estimate the state
    bool fit_offset = true;
};

/// Markov LS -> Ho-Kalman -> state estimate on the last context window ->
/// simulation over the query inputs.
std::vector<double> baseline_simulate(std::span<const double> u_context, std::span<const double> y_context,
                                      std::span<const double> u_query, const SubspaceOptions& opts = {});

}  // namespace metasysid::baseline
