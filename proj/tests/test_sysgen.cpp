#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "metasysid/sysgen.hpp"

using namespace metasysid;
using namespace metasysid::sysgen;

namespace {

std::vector<Complex> eigs_of(const Matrix& A) {
    Eigen::EigenSolver<Matrix> es(A, false);
    std::vector<Complex> out(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
    std::sort(out.begin(), out.end(), [](Complex a, Complex b) {
        return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return out;
}

std::vector<double> white(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> u(static_cast<std::size_t>(n));
    for (auto& v : u) v = d(rng);
    return u;
}

// Plain state recursion, independent of the library's loop.
std::vector<double> reference_sim(const LtiSystem& s, const std::vector<double>& u) {
    Vector x = Vector::Zero(s.order());
    std::vector<double> y;
    for (double uk : u) {
        y.push_back((s.C * x)(0) + s.D(0, 0) * uk);
        x = (s.A * x + s.B * uk).eval();
    }
    return y;
}

LtiSystem scalar(double a, double b, double c, double d) {
    LtiSystem s;
    s.A = Matrix::Constant(1, 1, a);
    s.B = Matrix::Constant(1, 1, b);
    s.C = Matrix::Constant(1, 1, c);
    s.D = Matrix::Constant(1, 1, d);
    return s;
}

}  // namespace

TEST_CASE("eigenvalue samples respect the region") {
    const auto nominal = EigenRegion::nominal();
    Rng rng(1);
    const auto one = sample_eigenvalues(rng, 1, nominal);
    REQUIRE(one.size() == 1);
    CHECK(one[0].imag() == 0.0);
    CHECK(one[0].real() > 0.5);
    CHECK(one[0].real() < 0.97);

    for (int rep = 0; rep < 200; ++rep) {
        const auto two = sample_eigenvalues(rng, 2, nominal);
        REQUIRE(two.size() == 2);
        if (two[0].imag() != 0.0) {
            CHECK(two[1] == std::conj(two[0]));
        } else {
            CHECK(two[1].imag() == 0.0);
        }
    }

    int outside = 0;
    for (int rep = 0; rep < 1000; ++rep)
        for (auto l : sample_eigenvalues(rng, 10, nominal))
            if (!(std::abs(l) > 0.5 && std::abs(l) < 0.97 && std::abs(std::arg(l)) < std::numbers::pi / 2)) ++outside;
    CHECK(outside == 0);

    const auto shifted = EigenRegion::shifted();
    for (int rep = 0; rep < 500; ++rep)
        for (auto l : sample_eigenvalues(rng, 6, shifted)) CHECK(shifted.contains(l));
}

TEST_CASE("region validation") {
    CHECK_NOTHROW(EigenRegion::nominal().validate());
    CHECK_THROWS_AS((EigenRegion{0.5, 1.2, -1.0, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((EigenRegion{0.9, 0.5, -1.0, 1.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((EigenRegion{0.5, 0.9, 1.0, -1.0}.validate()), std::invalid_argument);
    CHECK(region_from_json(to_json(EigenRegion::shifted())) == EigenRegion::shifted());
}

TEST_CASE("state matrix carries the requested spectrum") {
    Rng rng(2);
    const std::vector<Complex> single{Complex(0.6, 0.0)};
    const auto A1 = build_state_matrix(single, rng);
    CHECK(A1.rows() == 1);
    CHECK(A1(0, 0) == doctest::Approx(0.6).epsilon(1e-12));

    const Complex l = std::polar(0.7, std::numbers::pi / 4);
    const std::vector<Complex> pair{l, std::conj(l)};
    const auto got = eigs_of(build_state_matrix(pair, rng));
    CHECK(std::abs(got[0] - std::conj(l)) < 1e-9);
    CHECK(std::abs(got[1] - l) < 1e-9);

    for (int rep = 0; rep < 100; ++rep) {
        auto want = sample_eigenvalues(rng, 7, EigenRegion::nominal());
        std::sort(want.begin(), want.end(), [](Complex a, Complex b) {
            return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
        });
        const auto have = eigs_of(build_state_matrix(want, rng));
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(have[i] - want[i]) < 1e-9 * 1.0);
    }
}

TEST_CASE("sampled 10th-order systems are stable with margin") {
    Rng rng(3);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const auto s = sample_lti(rng, 10, 10, EigenRegion::nominal());
        for (auto l : eigs_of(s.A)) worst = std::max(worst, std::abs(l));
    }
    CHECK(worst < 0.97);
}

TEST_CASE("order histogram is uniform") {
    Rng rng(4);
    std::vector<int> count(11, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const auto s = sample_lti(rng, 1, 10, EigenRegion::nominal());
        REQUIRE(s.order() >= 1);
        REQUIRE(s.order() <= 10);
        ++count[static_cast<std::size_t>(s.order())];
    }
    const double expect = n / 10.0;
    const double band = 3.0 * std::sqrt(n * 0.1 * 0.9);
    double chi2 = 0.0;
    for (int k = 1; k <= 10; ++k) {
        CHECK(std::abs(count[static_cast<std::size_t>(k)] - expect) < band);
        chi2 += std::pow(count[static_cast<std::size_t>(k)] - expect, 2) / expect;
    }
    // 99.9% point of chi-square with 9 degrees of freedom.
    CHECK(chi2 < 27.88);

    for (int i = 0; i < 50; ++i) CHECK(sample_lti(rng, 3, 3, EigenRegion::nominal()).order() == 3);
}

TEST_CASE("system shapes") {
    Rng rng(5);
    const auto s = sample_lti(rng, 4, 4, EigenRegion::nominal());
    CHECK(s.B.rows() == 4);
    CHECK(s.B.cols() == 1);
    CHECK(s.C.rows() == 1);
    CHECK(s.C.cols() == 4);
    CHECK(s.D.size() == 1);

    const auto f = sample_mlp(rng, 32);
    CHECK(f.hidden() == 32);
    CHECK(f.w1.size() == 32);
    CHECK(f.w2.size() == 32);
    CHECK(f(0.0) == 0.0);
    CHECK(f.b2 == 0.0);

    for (int i = 0; i < 50; ++i) {
        const auto w = sample_wh(rng, 1, 5, EigenRegion::nominal());
        CHECK(w.g1.order() >= 1);
        CHECK(w.g1.order() <= 5);
        CHECK(w.g2.order() >= 1);
        CHECK(w.g2.order() <= 5);
        CHECK(w.f.hidden() == 32);
    }
}

TEST_CASE("output-layer weight scale follows fan-in") {
    Rng rng(6);
    double s = 0.0, s2 = 0.0;
    std::int64_t n = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto f = sample_mlp(rng, 32);
        for (Eigen::Index j = 0; j < f.w2.size(); ++j) {
            s += f.w2(j);
            s2 += f.w2(j) * f.w2(j);
            ++n;
        }
    }
    const double mean = s / static_cast<double>(n);
    const double sd = std::sqrt(s2 / static_cast<double>(n) - mean * mean);
    CHECK(std::abs(sd - std::sqrt(2.0 / 32.0)) / std::sqrt(2.0 / 32.0) < 0.05);
}

TEST_CASE("lti simulation by hand") {
    const std::vector<double> u{1.0, 0.0, 0.0};
    const auto y0 = simulate_lti(scalar(0.5, 1.0, 2.0, 0.0), u);
    CHECK(y0 == std::vector<double>{0.0, 2.0, 1.0});
    const auto y1 = simulate_lti(scalar(0.5, 1.0, 2.0, 1.0), u);
    CHECK(y1 == std::vector<double>{1.0, 2.0, 1.0});
    // Nonzero initial state adds its free response.
    const auto yx = simulate_lti(scalar(0.5, 1.0, 2.0, 0.0), std::vector<double>{0.0, 0.0}, Vector::Constant(1, 1.0));
    CHECK(yx == std::vector<double>{2.0, 1.0});
}

TEST_CASE("lti simulation matches a reference recursion and is linear") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const auto s = sample_lti(rng, 1, 10, EigenRegion::nominal());
        const auto u = white(10000, 100 + rep);
        const auto y = simulate_lti(s, u);
        const auto ref = reference_sim(s, u);
        double worst = 0.0, peak = 0.0;
        for (std::size_t k = 0; k < y.size(); ++k) {
            REQUIRE(std::isfinite(y[k]));
            worst = std::max(worst, std::abs(y[k] - ref[k]));
            peak = std::max(peak, std::abs(y[k]));
        }
        CHECK(worst <= 1e-9 * std::max(1.0, peak));
        CHECK(peak < 1e6);

        const auto u2 = white(10000, 500 + rep);
        std::vector<double> mix(u.size());
        for (std::size_t k = 0; k < u.size(); ++k) mix[k] = 2.0 * u[k] - 0.5 * u2[k];
        const auto ym = simulate_lti(s, mix), y2 = simulate_lti(s, u2);
        double err = 0.0, scale = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            err = std::max(err, std::abs(ym[k] - (2.0 * y[k] - 0.5 * y2[k])));
            scale = std::max(scale, std::abs(ym[k]));
        }
        CHECK(err <= 1e-9 * scale);
    }
}

TEST_CASE("wiener-hammerstein composition") {
    Rng rng(8);
    auto w = sample_wh(rng, 1, 5, EigenRegion::nominal());
    const auto u = white(500, 9);

    // Exact composition of the three blocks.
    const auto v = simulate_lti(w.g1, u);
    std::vector<double> z(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) z[k] = w.f(v[k]);
    CHECK(simulate_wh(w, u) == simulate_lti(w.g2, z));

    // tanh(eps v) / eps is the identity to well below 1e-6 on this range.
    const double eps = 1e-5;
    w.f.w1 = Vector::Constant(1, eps);
    w.f.b1 = Vector::Zero(1);
    w.f.w2 = Vector::Constant(1, 1.0 / eps);
    w.f.b2 = 0.0;
    const auto cascade = simulate_lti(w.g2, simulate_lti(w.g1, u));
    const auto got = simulate_wh(w, u);
    for (std::size_t k = 0; k < u.size(); ++k) CHECK(std::abs(got[k] - cascade[k]) < 1e-6);

    const auto zero = simulate_wh(sample_wh(rng, 1, 5, EigenRegion::nominal()), std::vector<double>(100, 0.0));
    CHECK(std::all_of(zero.begin(), zero.end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("sampled wiener-hammerstein systems are nonlinear") {
    Rng rng(10);
    int nonlinear = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const auto w = sample_wh(rng, 1, 5, EigenRegion::nominal());
        const auto u = white(300, 1000 + rep);
        std::vector<double> u2(u.size());
        for (std::size_t k = 0; k < u.size(); ++k) u2[k] = 2.0 * u[k];
        const auto y = simulate_wh(w, u), y2 = simulate_wh(w, u2);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) {
            num += std::pow(y2[k] - 2.0 * y[k], 2);
            den += std::pow(2.0 * y[k], 2);
        }
        if (den > 0.0 && std::sqrt(num / den) > 1e-3) ++nonlinear;
    }
    CHECK(nonlinear >= 90);
}

TEST_CASE("sampling is deterministic per seed") {
    Rng a(42), b(42);
    const auto s1 = sample_wh(a, 1, 5, EigenRegion::nominal());
    const auto s2 = sample_wh(b, 1, 5, EigenRegion::nominal());
    CHECK(s1.g1.A == s2.g1.A);
    CHECK(s1.g2.D == s2.g2.D);
    CHECK(s1.f.w1 == s2.f.w1);
    CHECK(to_json(s1) == to_json(s2));
}
