#include <doctest.h>

#include <cmath>
#include <random>

#include "metasysid/datastream.hpp"
#include "metasysid/errors.hpp"
#include "metasysid/metamodel.hpp"
#include "support/gradcheck.hpp"

using namespace metasysid;
using model::DecoderOnlyConfig;
using model::DecoderOnlyModel;
using model::EncoderDecoderConfig;
using model::EncoderDecoderModel;

namespace {

template <class T>
SeqTensor<T> randn(int batch, int steps, int channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    SeqTensor<T> s(batch, steps, channels);
    for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = static_cast<T>(d(rng));
    return s;
}

// Default init leaves most gradients tiny; a wider draw makes the check bite.
void scramble(nn::ParamStore<double>& store, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 0.3);
    for (auto& p : store)
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += d(rng);
}

DecoderOnlyConfig tiny_decoder() { return {2, 2, 16, 8, 1, 1}; }
EncoderDecoderConfig tiny_encdec() { return {2, 2, 16, 8, 8, 1, 1}; }

bool bitwise_equal_rows(const Matrix<float>& a, const Matrix<float>& b, Eigen::Index rows) {
    return std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(rows * a.cols())) == 0;
}

}  // namespace

TEST_CASE("decoder-only forward shapes and overflow") {
    DecoderOnlyModel<float> m({2, 2, 16, 20, 1, 1}, 1);
    auto u = randn<float>(3, 20, 1, 2), y = randn<float>(3, 20, 1, 3);
    auto out = m.forward(u, y);
    CHECK(out.batch == 3);
    CHECK(out.steps == 20);
    CHECK(out.channels() == 1);
    CHECK(out.data.allFinite());
    auto u2 = randn<float>(1, 21, 1, 4), y2 = randn<float>(1, 21, 1, 5);
    CHECK_THROWS_AS((void)m.forward(u2, y2), ContextOverflowError);
}

TEST_CASE("decoder-only multi-output width") {
    DecoderOnlyModel<float> m({1, 2, 8, 10, 2, 3}, 1);
    auto out = m.forward(randn<float>(2, 10, 2, 1), randn<float>(2, 10, 3, 2));
    CHECK(out.channels() == 3);
}

TEST_CASE("decoder-only causality is bitwise") {
    DecoderOnlyModel<float> m({2, 2, 16, 30, 1, 1}, 7);
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto u = randn<float>(1, 30, 1, 100 + trial), y = randn<float>(1, 30, 1, 200 + trial);
        const int k = std::uniform_int_distribution<int>(0, 28)(rng);
        auto base = m.forward(u, y);
        for (int t = k + 1; t < 30; ++t) {
            u(0, t, 0) += 3.0f;
            y(0, t, 0) -= 1.5f;
        }
        auto pert = m.forward(u, y);
        CHECK(bitwise_equal_rows(base.data, pert.data, k + 1));
        CHECK(base.data(29, 0) != pert.data(29, 0));
    }
}

TEST_CASE("encoder is bidirectional and position-aware") {
    EncoderDecoderModel<float> m({2, 2, 16, 12, 6, 1, 1}, 3);
    auto u = randn<float>(1, 12, 1, 1), y = randn<float>(1, 12, 1, 2);
    auto z = m.encode(u, y);
    CHECK(z.steps == 12);
    CHECK(z.channels() == 16);

    auto u1 = u;
    u1(0, 0, 0) += 1.0f;
    auto z1 = m.encode(u1, y);
    CHECK((z1.data.row(11) - z.data.row(11)).norm() > 0.0f);

    auto us = u, ys = y;
    std::swap(us(0, 2, 0), us(0, 5, 0));
    std::swap(ys(0, 2, 0), ys(0, 5, 0));
    auto zs = m.encode(us, ys);
    CHECK((zs.data - z.data).norm() > 0.0f);

    CHECK_THROWS_AS((void)m.encode(randn<float>(1, 13, 1, 1), randn<float>(1, 13, 1, 2)), ContextOverflowError);
}

TEST_CASE("decoder causality and dependence on the context embedding") {
    EncoderDecoderModel<float> m({2, 2, 16, 10, 12, 1, 1}, 5);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto uc = randn<float>(1, 10, 1, trial), yc = randn<float>(1, 10, 1, 50 + trial);
        auto uq = randn<float>(1, 12, 1, 100 + trial);
        const int j = std::uniform_int_distribution<int>(0, 10)(rng);
        auto base = m.forward(uc, yc, uq);
        for (int t = j + 1; t < 12; ++t) uq(0, t, 0) *= -2.0f;
        auto pert = m.forward(uc, yc, uq);
        CHECK(bitwise_equal_rows(base.data, pert.data, j + 1));
    }
    auto uq = randn<float>(1, 12, 1, 9);
    auto a = m.forward(randn<float>(1, 10, 1, 1), randn<float>(1, 10, 1, 2), uq);
    auto b = m.forward(randn<float>(1, 10, 1, 3), randn<float>(1, 10, 1, 4), uq);
    CHECK((a.data - b.data).norm() > 0.0f);
    CHECK(m.decode(m.encode(randn<float>(1, 10, 1, 1), randn<float>(1, 10, 1, 2)), SeqTensor<float>(1, 0, 1)).steps ==
          0);
    CHECK_THROWS_AS((void)m.forward(randn<float>(1, 10, 1, 1), randn<float>(1, 10, 1, 2), randn<float>(1, 13, 1, 3)),
                    ContextOverflowError);
}

TEST_CASE("mean squared error arithmetic") {
    SeqTensor<double> p(1, 1, 1), t(1, 1, 1);
    p(0, 0, 0) = 0.5;
    t(0, 0, 0) = 1.0;
    CHECK(model::mean_squared_error(p, t) == doctest::Approx(0.25));
    CHECK(model::mean_squared_error(t, t) == 0.0);
}

TEST_CASE("zero predictor on normalized targets has loss near one") {
    // Direct computation: mean of y^2 over targets normalized per sequence.
    data::StreamConfig cfg;
    cfg.batch_size = 16;
    cfg.seq_len = 200;
    auto batch = data::make_batch(cfg, 0);
    SeqTensor<float> zero(batch.y.batch, batch.y.steps - 1, 1);
    const auto target = batch.y.slice_steps(1, batch.y.steps);
    const double l = model::mean_squared_error(zero, target);
    CHECK(l == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("parameter count closed form matches the built parameter store") {
    for (auto cfg : {DecoderOnlyConfig{2, 2, 16, 8, 1, 1}, DecoderOnlyConfig{4, 4, 64, 200, 1, 1},
                     DecoderOnlyConfig{3, 1, 24, 50, 2, 3}}) {
        DecoderOnlyModel<float> m(cfg, 0);
        CHECK(m.params().num_elements() == model::parameter_count(cfg));
    }
    for (auto cfg : {EncoderDecoderConfig{2, 2, 16, 8, 8, 1, 1}, EncoderDecoderConfig{4, 4, 64, 100, 50, 1, 1},
                     EncoderDecoderConfig{1, 3, 12, 7, 5, 2, 2}}) {
        EncoderDecoderModel<float> m(cfg, 0);
        CHECK(m.params().num_elements() == model::parameter_count(cfg));
    }
}

TEST_CASE("parameter counts for the published configurations") {
    const auto within = [](double got, double ref) { return std::abs(got - ref) / ref <= 0.05; };
    // Rows of the prediction and simulation settings tables.
    CHECK(within(model::parameter_count(DecoderOnlyConfig{12, 4, 128, 600, 1, 1}), 2.44e6));
    CHECK(within(model::parameter_count(DecoderOnlyConfig{12, 12, 768, 1024, 1, 1}), 85.74e6));
    CHECK(within(model::parameter_count(EncoderDecoderConfig{12, 4, 128, 400, 100, 1, 1}), 5.6e6));
    // The LTI row lists 4 layers but its 1.68 M count corresponds to 8 blocks of
    // this layout; 4 blocks give about half.
    CHECK_FALSE(within(model::parameter_count(DecoderOnlyConfig{4, 4, 128, 400, 1, 1}), 1.68e6));
    CHECK(within(model::parameter_count(DecoderOnlyConfig{8, 4, 128, 400, 1, 1}), 1.68e6));
}

TEST_CASE("one-step loss gradient matches finite differences") {
    DecoderOnlyModel<double> m(tiny_decoder(), 21);
    scramble(m.params(), 1);
    // 9 samples give 8 tokens per sequence.
    auto u = randn<double>(2, 9, 1, 1), y = randn<double>(2, 9, 1, 2);
    model::one_step_loss(m, u, y, true);
    auto res = testsupport::finite_difference_check(
        m.params(), [&] { return model::one_step_loss(m, u, y, false); }, 120, 99);
    INFO(res.worst);
    CHECK(res.checked >= 50);
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("simulation loss gradient matches finite differences") {
    EncoderDecoderModel<double> m(tiny_encdec(), 22);
    scramble(m.params(), 2);
    auto u = randn<double>(2, 16, 1, 3), y = randn<double>(2, 16, 1, 4);
    data::ContextQuery<double> split{u.slice_steps(0, 8), y.slice_steps(0, 8), u.slice_steps(8, 16),
                                     y.slice_steps(8, 16)};
    model::sim_loss(m, split, true);
    auto res = testsupport::finite_difference_check(
        m.params(), [&] { return model::sim_loss(m, split, false); }, 160, 98);
    INFO(res.worst);
    CHECK(res.checked >= 50);
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("config records reject unknown and missing keys") {
    auto j = model::to_json(DecoderOnlyConfig{});
    CHECK(model::decoder_only_config_from_json(j) == DecoderOnlyConfig{});
    auto bad = j;
    bad["dropout"] = 0.1;
    CHECK_THROWS_AS(model::decoder_only_config_from_json(bad), ConfigError);
    bad = j;
    bad.erase("n_heads");
    CHECK_THROWS_AS(model::decoder_only_config_from_json(bad), ConfigError);
    CHECK(model::is_encoder_decoder_json(model::to_json(EncoderDecoderConfig{})));
    CHECK_THROWS_AS((DecoderOnlyConfig{2, 3, 16, 8, 1, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((DecoderOnlyConfig{2, 2, 16, 1, 1, 1}.validate()), ConfigError);
}
