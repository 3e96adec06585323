#pragma once

#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "metasysid/seeding.hpp"

/// Random stable SISO systems: LTI state-space models and Wiener-Hammerstein
/// cascades G1 -> F -> G2. All arithmetic is double precision.
namespace metasysid::sysgen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

struct EigenRegion {
    double mag_min = 0.5;
    double mag_max = 0.97;
    double phase_min = -std::numbers::pi / 2;
    double phase_max = std::numbers::pi / 2;

    /// Magnitude (0.5, 0.97), phase (-pi/2, pi/2): the training prior.
    static EigenRegion nominal() { return {}; }
    /// Magnitude (0.2, 0.99), phase (-3pi/4, 3pi/4): the distribution-shift test.
    static EigenRegion shifted() {
        return {0.2, 0.99, -0.75 * std::numbers::pi, 0.75 * std::numbers::pi};
    }

    /// Throws std::invalid_argument unless 0 < mag_min < mag_max < 1 and
    /// -pi <= phase_min < phase_max <= pi.
    void validate() const;
    /// Open-region membership test.
    [[nodiscard]] bool contains(Complex lambda) const;

    friend bool operator==(const EigenRegion&, const EigenRegion&) = default;
};

struct LtiSystem {
    Matrix A;
    Matrix B;
    Matrix C;
    Matrix D;

    [[nodiscard]] int order() const { return static_cast<int>(A.rows()); }
};

/// Static nonlinearity f(v) = w2 . tanh(w1 v + b1) + b2 with one hidden layer.
struct MlpNonlinearity {
    Vector w1;
    Vector b1;
    Vector w2;
    double b2 = 0.0;

    [[nodiscard]] int hidden() const { return static_cast<int>(w1.size()); }
    [[nodiscard]] double operator()(double v) const;
};

struct WhSystem {
    LtiSystem g1;
    MlpNonlinearity f;
    LtiSystem g2;
};

/// Draws n_x eigenvalues closed under conjugation. The number of conjugate
/// pairs is uniform on {0, ..., n_x/2}; magnitudes are uniform on
/// (mag_min, mag_max), pair phases uniform on (0, phase_limit) and mirrored.
/// Remaining slots are positive reals. The region must contain the positive
/// real axis segment, i.e. phase_min < 0 < phase_max.
std::vector<Complex> sample_eigenvalues(Rng& rng, int n_x, const EigenRegion& region);

/// Real matrix with the given spectrum: real modal form conjugated by a
/// random orthogonal matrix.
Matrix build_state_matrix(std::span<const Complex> eigs, Rng& rng);

/// Order uniform on [order_min, order_max]; B, C, D entries standard normal.
LtiSystem sample_lti(Rng& rng, int order_min, int order_max, const EigenRegion& region);

/// Kaiming-normal weights (std sqrt(2 / fan_in)) and zero biases.
MlpNonlinearity sample_mlp(Rng& rng, int hidden);

WhSystem sample_wh(Rng& rng, int order_min, int order_max, const EigenRegion& region, int hidden = 32);

/// y_k = C x_k + D u_k, x_{k+1} = A x_k + B u_k, starting from x0.
std::vector<double> simulate_lti(const LtiSystem& sys, std::span<const double> u, const Vector& x0);
std::vector<double> simulate_lti(const LtiSystem& sys, std::span<const double> u);

std::vector<double> simulate_wh(const WhSystem& sys, std::span<const double> u);

/// Debug records: matrices as nested arrays plus order metadata.
nlohmann::json to_json(const LtiSystem& sys);
nlohmann::json to_json(const MlpNonlinearity& f);
nlohmann::json to_json(const WhSystem& sys);
nlohmann::json to_json(const EigenRegion& region);
EigenRegion region_from_json(const nlohmann::json& j);

}  // namespace metasysid::sysgen
