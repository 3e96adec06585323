#include "metasysid/sysgen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace metasysid::sysgen {

namespace {

double uniform_open(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    double v = dist(rng);
    while (v <= lo || v >= hi) v = dist(rng);
    return v;
}

Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

Matrix random_orthogonal(Rng& rng, Eigen::Index n) {
    const Matrix g = gaussian_matrix(rng, n, n);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    const Matrix& r = qr.matrixQR();
    // Sign fix makes Q Haar-distributed.
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

nlohmann::json matrix_json(const Matrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

void check_finite(std::span<const double> u) {
    for (std::size_t k = 0; k < u.size(); ++k)
        if (!std::isfinite(u[k]))
            throw std::invalid_argument("simulate: non-finite input at index " + std::to_string(k));
}

}  // namespace

void EigenRegion::validate() const {
    if (!(mag_min > 0.0 && mag_min < mag_max && mag_max < 1.0))
        throw std::invalid_argument("EigenRegion: require 0 < mag_min < mag_max < 1");
    if (!(phase_min >= -std::numbers::pi && phase_min < phase_max && phase_max <= std::numbers::pi))
        throw std::invalid_argument("EigenRegion: require -pi <= phase_min < phase_max <= pi");
}

bool EigenRegion::contains(Complex lambda) const {
    const double mag = std::abs(lambda);
    const double phase = std::arg(lambda);
    return mag > mag_min && mag < mag_max && phase > phase_min && phase < phase_max;
}

double MlpNonlinearity::operator()(double v) const {
    double out = b2;
    for (Eigen::Index i = 0; i < w1.size(); ++i) out += w2[i] * std::tanh(w1[i] * v + b1[i]);
    return out;
}

std::vector<Complex> sample_eigenvalues(Rng& rng, int n_x, const EigenRegion& region) {
    if (n_x < 1) throw std::invalid_argument("sample_eigenvalues: n_x must be >= 1");
    region.validate();
    if (!(region.phase_min < 0.0 && region.phase_max > 0.0))
        throw std::invalid_argument("sample_eigenvalues: region must straddle the positive real axis");
    const double phase_limit = std::min(region.phase_max, -region.phase_min);

    std::uniform_int_distribution<int> pair_count(0, n_x / 2);
    const int n_pairs = pair_count(rng);

    std::vector<Complex> eigs;
    eigs.reserve(static_cast<std::size_t>(n_x));
    for (int p = 0; p < n_pairs; ++p) {
        const double mag = uniform_open(rng, region.mag_min, region.mag_max);
        const double phase = uniform_open(rng, 0.0, phase_limit);
        const Complex lambda = std::polar(mag, phase);
        eigs.push_back(lambda);
        eigs.push_back(std::conj(lambda));
    }
    for (int r = 2 * n_pairs; r < n_x; ++r) eigs.emplace_back(uniform_open(rng, region.mag_min, region.mag_max), 0.0);
    return eigs;
}

Matrix build_state_matrix(std::span<const Complex> eigs, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(eigs.size());
    if (n == 0) throw std::invalid_argument("build_state_matrix: empty spectrum");

    std::vector<Complex> upper;
    std::vector<Complex> lower;
    std::vector<double> reals;
    for (const Complex& e : eigs) {
        const double tol = 1e-12 * std::max(1.0, std::abs(e));
        if (std::abs(e.imag()) <= tol)
            reals.push_back(e.real());
        else if (e.imag() > 0.0)
            upper.push_back(e);
        else
            lower.push_back(e);
    }
    if (upper.size() != lower.size())
        throw std::invalid_argument("build_state_matrix: spectrum not closed under conjugation");
    for (const Complex& e : upper) {
        const auto match = std::find_if(lower.begin(), lower.end(), [&](const Complex& l) {
            return std::abs(l - std::conj(e)) <= 1e-12 * std::max(1.0, std::abs(e));
        });
        if (match == lower.end())
            throw std::invalid_argument("build_state_matrix: spectrum not closed under conjugation");
        lower.erase(match);
    }

    Matrix modal = Matrix::Zero(n, n);
    Eigen::Index k = 0;
    for (const Complex& e : upper) {
        modal(k, k) = e.real();
        modal(k, k + 1) = e.imag();
        modal(k + 1, k) = -e.imag();
        modal(k + 1, k + 1) = e.real();
        k += 2;
    }
    for (double r : reals) {
        modal(k, k) = r;
        ++k;
    }
    if (n == 1) return modal;
    const Matrix q = random_orthogonal(rng, n);
    return q * modal * q.transpose();
}

LtiSystem sample_lti(Rng& rng, int order_min, int order_max, const EigenRegion& region) {
    if (order_min < 1 || order_max < order_min)
        throw std::invalid_argument("sample_lti: require 1 <= order_min <= order_max");
    std::uniform_int_distribution<int> order_dist(order_min, order_max);
    const int n_x = order_dist(rng);
    const auto eigs = sample_eigenvalues(rng, n_x, region);
    LtiSystem sys;
    sys.A = build_state_matrix(eigs, rng);
    sys.B = gaussian_matrix(rng, n_x, 1);
    sys.C = gaussian_matrix(rng, 1, n_x);
    sys.D = gaussian_matrix(rng, 1, 1);
    return sys;
}

MlpNonlinearity sample_mlp(Rng& rng, int hidden) {
    if (hidden < 1) throw std::invalid_argument("sample_mlp: hidden must be >= 1");
    MlpNonlinearity f;
    f.w1 = gaussian_matrix(rng, hidden, 1, std::sqrt(2.0 / 1.0));
    f.b1 = Vector::Zero(hidden);
    f.w2 = gaussian_matrix(rng, hidden, 1, std::sqrt(2.0 / hidden));
    f.b2 = 0.0;
    return f;
}

WhSystem sample_wh(Rng& rng, int order_min, int order_max, const EigenRegion& region, int hidden) {
    WhSystem sys;
    sys.g1 = sample_lti(rng, order_min, order_max, region);
    sys.f = sample_mlp(rng, hidden);
    sys.g2 = sample_lti(rng, order_min, order_max, region);
    return sys;
}

std::vector<double> simulate_lti(const LtiSystem& sys, std::span<const double> u, const Vector& x0) {
    check_finite(u);
    const auto n = sys.A.rows();
    if (x0.size() != n) throw std::invalid_argument("simulate_lti: x0 dimension mismatch");
    const Eigen::VectorXd b = sys.B.col(0);
    const Eigen::RowVectorXd c = sys.C.row(0);
    const double d = sys.D(0, 0);
    std::vector<double> y(u.size());
    Vector x = x0;
    Vector next(n);
    for (std::size_t k = 0; k < u.size(); ++k) {
        y[k] = c.dot(x) + d * u[k];
        next.noalias() = sys.A * x;
        next += b * u[k];
        x.swap(next);
    }
    return y;
}

std::vector<double> simulate_lti(const LtiSystem& sys, std::span<const double> u) {
    return simulate_lti(sys, u, Vector::Zero(sys.A.rows()));
}

std::vector<double> simulate_wh(const WhSystem& sys, std::span<const double> u) {
    std::vector<double> v = simulate_lti(sys.g1, u);
    for (double& x : v) x = sys.f(x);
    return simulate_lti(sys.g2, v);
}

nlohmann::json to_json(const LtiSystem& sys) {
    return {{"order", sys.order()},
            {"A", matrix_json(sys.A)},
            {"B", matrix_json(sys.B)},
            {"C", matrix_json(sys.C)},
            {"D", matrix_json(sys.D)}};
}

nlohmann::json to_json(const MlpNonlinearity& f) {
    return {{"hidden", f.hidden()},
            {"activation", "tanh"},
            {"W1", matrix_json(f.w1)},
            {"b1", matrix_json(f.b1)},
            {"W2", matrix_json(f.w2.transpose())},
            {"b2", f.b2}};
}

nlohmann::json to_json(const WhSystem& sys) {
    return {{"G1", to_json(sys.g1)}, {"F", to_json(sys.f)}, {"G2", to_json(sys.g2)}};
}

nlohmann::json to_json(const EigenRegion& region) {
    return {{"mag_min", region.mag_min},
            {"mag_max", region.mag_max},
            {"phase_min", region.phase_min},
            {"phase_max", region.phase_max}};
}

EigenRegion region_from_json(const nlohmann::json& j) {
    EigenRegion r;
    for (const auto& [key, value] : j.items()) {
        if (key == "mag_min")
            r.mag_min = value.get<double>();
        else if (key == "mag_max")
            r.mag_max = value.get<double>();
        else if (key == "phase_min")
            r.phase_min = value.get<double>();
        else if (key == "phase_max")
            r.phase_max = value.get<double>();
        else
            throw std::invalid_argument("unknown eigen-region key '" + key + "'");
    }
    r.validate();
    return r;
}

}  // namespace metasysid::sysgen
