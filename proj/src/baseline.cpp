#include "metasysid/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "metasysid/errors.hpp"

namespace metasysid::baseline {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void require_same_length(std::span<const double> u, std::span<const double> y, const char* who) {
    if (u.size() != y.size()) throw std::invalid_argument(std::string(who) + ": u and y lengths differ");
}

double at_or_zero(std::span<const double> x, long k) { return k >= 0 ? x[static_cast<std::size_t>(k)] : 0.0; }

// Numerical rank cut: singular values below this fraction of the largest are treated as zero.
constexpr double kRankTol = 1e-9;

}  // namespace

void arx_regression(std::span<const double> u, std::span<const double> y, int na, int nb,
                    const ArxFitOptions& opts, MatrixXd& phi, VectorXd& target) {
    require_same_length(u, y, "arx_regression");
    const long m = static_cast<long>(y.size());
    const long start = std::max<long>(na, nb > 0 ? opts.nk + nb - 1 : 0);
    const long rows = std::max(0L, m - start);
    phi.resize(rows, na + nb + (opts.intercept ? 1 : 0));
    target.resize(rows);
    for (long r = 0; r < rows; ++r) {
        const long k = start + r;
        for (int i = 1; i <= na; ++i) phi(r, i - 1) = y[static_cast<std::size_t>(k - i)];
        for (int j = 0; j < nb; ++j) phi(r, na + j) = u[static_cast<std::size_t>(k - opts.nk - j)];
        if (opts.intercept) phi(r, na + nb) = 1.0;
        target(r) = y[static_cast<std::size_t>(k)];
    }
}

ArxModel fit_arx_ls(std::span<const double> u, std::span<const double> y, int na, int nb, const ArxFitOptions& opts) {
    if (na < 0 || nb < 0 || opts.nk < 0) throw std::invalid_argument("fit_arx_ls: orders must be >= 0");
    require_same_length(u, y, "fit_arx_ls");
    if (static_cast<long>(y.size()) <= na + nb + 1)
        throw std::invalid_argument("fit_arx_ls: need m > na + nb + 1 samples");
    if (na + nb == 0 && !opts.intercept) throw SingularFitError("fit_arx_ls: empty regressor (na = nb = 0)");
    MatrixXd phi;
    VectorXd target;
    arx_regression(u, y, na, nb, opts, phi, target);
    MatrixXd normal = phi.transpose() * phi;
    normal.diagonal().array() += opts.ridge;
    const Eigen::LDLT<MatrixXd> ldlt(normal);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularFitError("fit_arx_ls: regularized normal equations are singular");
    const VectorXd theta = ldlt.solve(phi.transpose() * target);
    if (!theta.allFinite()) throw SingularFitError("fit_arx_ls: non-finite solution");
    return {na, nb, opts.nk, theta.head(na), theta.segment(na, nb), opts.intercept ? theta(na + nb) : 0.0};
}

namespace {

double arx_step(const ArxModel& model, std::span<const double> u, std::span<const double> y, long k) {
    double acc = model.c;
    for (int i = 1; i <= model.na; ++i) acc += model.a(i - 1) * at_or_zero(y, k - i);
    for (int j = 0; j < model.nb; ++j) acc += model.b(j) * at_or_zero(u, k - model.nk - j);
    return acc;
}

}  // namespace

std::vector<double> arx_predict(const ArxModel& model, std::span<const double> u, std::span<const double> y) {
    require_same_length(u, y, "arx_predict");
    std::vector<double> out(y.size(), 0.0);
    for (long k = 0; k < static_cast<long>(y.size()); ++k) out[static_cast<std::size_t>(k)] = arx_step(model, u, y, k);
    return out;
}

std::vector<double> arx_simulate(const ArxModel& model, std::span<const double> u_context,
                                 std::span<const double> y_context, std::span<const double> u_query) {
    require_same_length(u_context, y_context, "arx_simulate");
    std::vector<double> u(u_context.begin(), u_context.end());
    std::vector<double> y(y_context.begin(), y_context.end());
    u.insert(u.end(), u_query.begin(), u_query.end());
    const long m = static_cast<long>(y_context.size());
    y.reserve(u.size());
    // y grows as we go; only entries before k are read.
    for (long k = m; k < static_cast<long>(u.size()); ++k) y.push_back(arx_step(model, u, y, k));
    return {y.begin() + m, y.end()};
}

MarkovEstimate estimate_markov_ls(std::span<const double> u, std::span<const double> y, int L, bool fit_offset) {
    require_same_length(u, y, "estimate_markov_ls");
    if (L < 0) throw std::invalid_argument("estimate_markov_ls: L must be >= 0");
    const long m = static_cast<long>(y.size());
    if (m < 5L * L || m <= L + 1) throw std::invalid_argument("estimate_markov_ls: need m >= 5 L samples");
    const int cols = L + 1 + (fit_offset ? 1 : 0);
    MatrixXd phi(m, cols);
    VectorXd target(m);
    for (long k = 0; k < m; ++k) {
        for (int j = 0; j <= L; ++j) phi(k, j) = at_or_zero(u, k - j);
        if (fit_offset) phi(k, L + 1) = 1.0;
        target(k) = y[static_cast<std::size_t>(k)];
    }
    const VectorXd theta = phi.colPivHouseholderQr().solve(target);
    MarkovEstimate est;
    est.h = theta.head(L + 1);
    est.offset = fit_offset ? theta(L + 1) : 0.0;
    return est;
}

namespace {

void hankel_pair(const VectorXd& h, MatrixXd& H, MatrixXd& H_shift) {
    const int L = static_cast<int>(h.size()) - 1;
    const int p = L / 2;
    const int q = L - p;
    H.resize(p, q);
    H_shift.resize(p, q);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) {
            H(i, j) = h(1 + i + j);
            H_shift(i, j) = i + j + 2 <= L ? h(2 + i + j) : 0.0;
        }
}

int numerical_rank(const VectorXd& s) {
    if (s.size() == 0 || !(s(0) > 0.0)) return 0;
    int r = 0;
    while (r < s.size() && s(r) > kRankTol * s(0)) ++r;
    return r;
}

}  // namespace

VectorXd hankel_singular_values(const VectorXd& h) {
    if (h.size() < 3) return VectorXd();
    MatrixXd H, Hs;
    hankel_pair(h, H, Hs);
    return Eigen::JacobiSVD<MatrixXd>(H).singularValues();
}

int select_order(const VectorXd& s, int max_order) {
    const int n = static_cast<int>(s.size());
    if (n == 0 || !(s(0) > 0.0)) return 0;
    if (n == 1) return 1;
    const int limit = std::min(max_order, n - 1);
    int best = 1;
    double best_gap = -1.0;
    const double floor = s(0) * 1e-300;
    for (int i = 1; i <= limit; ++i) {
        const double gap = std::log(std::max(s(i - 1), floor)) - std::log(std::max(s(i), floor));
        if (gap > best_gap) {
            best_gap = gap;
            best = i;
        }
    }
    return best;
}

sysgen::LtiSystem ho_kalman(const VectorXd& h, int r) {
    if (r < 1) throw std::invalid_argument("ho_kalman: order must be >= 1");
    const int L = static_cast<int>(h.size()) - 1;
    if (L < 2 * r) throw std::invalid_argument("ho_kalman: need L >= 2 r Markov parameters");
    MatrixXd H, H_shift;
    hankel_pair(h, H, H_shift);
    const Eigen::JacobiSVD<MatrixXd> svd(H, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd s = svd.singularValues();
    const int rank = numerical_rank(s);
    if (rank < r)
        throw RankError("ho_kalman: Hankel rank " + std::to_string(rank) + " is below requested order " +
                            std::to_string(r),
                        rank);
    const VectorXd sqrt_s = s.head(r).cwiseSqrt();
    const MatrixXd obs = svd.matrixU().leftCols(r) * sqrt_s.asDiagonal();
    const MatrixXd ctrl = sqrt_s.asDiagonal() * svd.matrixV().leftCols(r).transpose();
    const VectorXd inv_sqrt = sqrt_s.cwiseInverse();
    sysgen::LtiSystem sys;
    sys.A = inv_sqrt.asDiagonal() * svd.matrixU().leftCols(r).transpose() * H_shift * svd.matrixV().leftCols(r) *
            inv_sqrt.asDiagonal();
    sys.B = ctrl.col(0);
    sys.C = obs.row(0);
    sys.D = MatrixXd::Constant(1, 1, h(0));
    return sys;
}

VectorXd impulse_response(const sysgen::LtiSystem& sys, int n) {
    VectorXd h(n + 1);
    h(0) = sys.D(0, 0);
    VectorXd x = sys.B.col(0);
    for (int k = 1; k <= n; ++k) {
        h(k) = (sys.C * x)(0);
        x = sys.A * x;
    }
    return h;
}

std::vector<double> baseline_simulate(std::span<const double> u_context, std::span<const double> y_context,
                                      std::span<const double> u_query, const SubspaceOptions& opts) {
    require_same_length(u_context, y_context, "baseline_simulate");
    if (u_query.empty()) return {};
    const int m = static_cast<int>(u_context.size());
    const int L = opts.markov_length > 0 ? opts.markov_length : std::min(100, m / 5);
    const MarkovEstimate est = estimate_markov_ls(u_context, y_context, L, opts.fit_offset);
    int r = opts.order > 0 ? opts.order : select_order(hankel_singular_values(est.h), opts.max_order);
    r = std::min(r, L / 2);
    sysgen::LtiSystem sys;
    try {
        sys = ho_kalman(est.h, r);
    } catch (const RankError& e) {
        // A selected (not requested) order falls back to the realizable rank.
        if (opts.order > 0 || e.suggested_order < 1) throw;
        r = e.suggested_order;
        sys = ho_kalman(est.h, r);
    }

    // State at the start of the window from the free response over the window.
    const int W = std::min(opts.state_window, m);
    const int t0 = m - W;
    const auto u_win = u_context.subspan(static_cast<std::size_t>(t0));
    const auto forced = sysgen::simulate_lti(sys, u_win);
    MatrixXd obs(W, r);
    VectorXd resid(W);
    MatrixXd CA = sys.C;
    for (int i = 0; i < W; ++i) {
        obs.row(i) = CA;
        CA = CA * sys.A;
        resid(i) = y_context[static_cast<std::size_t>(t0 + i)] - est.offset - forced[static_cast<std::size_t>(i)];
    }
    VectorXd x = obs.colPivHouseholderQr().solve(resid);
    for (int i = 0; i < W; ++i) x = sys.A * x + sys.B * u_win[static_cast<std::size_t>(i)];

    std::vector<double> y = sysgen::simulate_lti(sys, u_query, x);
    for (double& v : y) v += est.offset;
    return y;
}

}  // namespace metasysid::baseline
