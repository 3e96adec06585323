#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "metasysid/errors.hpp"
#include "metasysid/trainer.hpp"

using namespace metasysid;
using namespace metasysid::train;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("metasysid_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

TrainConfig tiny_predictor(std::int64_t iters) {
    TrainConfig c;
    c.stream.seq_len = 17;
    c.stream.batch_size = 4;
    c.stream.global_seed = 9;
    c.model = ModelSpec::predictor({1, 2, 8, 16, 1, 1});
    c.n_iterations = iters;
    c.warmup_iters = 5;
    c.optimizer.lr = 3e-3;
    return c;
}

TrainConfig tiny_simulator(std::int64_t iters) {
    TrainConfig c;
    c.stream.seq_len = 20;
    c.stream.batch_size = 4;
    c.stream.global_seed = 10;
    c.model = ModelSpec::simulator({1, 2, 8, 12, 8, 1, 1});
    c.context_length = 12;
    c.n_iterations = iters;
    c.warmup_iters = 5;
    c.optimizer.lr = 3e-3;
    return c;
}

std::string bytes_of(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_values(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
    if (a.size() != b.size()) return false;
    auto ib = b.begin();
    for (const auto& p : a) {
        if (p.name != ib->name || p.value.size() != ib->value.size()) return false;
        if (std::memcmp(p.value.data(), ib->value.data(), sizeof(float) * std::size_t(p.value.size())) != 0)
            return false;
        ++ib;
    }
    return true;
}

}  // namespace

TEST_CASE("learning-rate warmup and loss smoothing") {
    TrainConfig c = tiny_predictor(10);
    c.optimizer.lr = 1e-3;
    c.warmup_iters = 4;
    CHECK(learning_rate_at(c, 0) == doctest::Approx(2.5e-4));
    CHECK(learning_rate_at(c, 3) == doctest::Approx(1e-3));
    CHECK(learning_rate_at(c, 100) == doctest::Approx(1e-3));
    c.warmup_iters = 0;
    CHECK(learning_rate_at(c, 0) == doctest::Approx(1e-3));

    LossStats s;
    s.update(2.0);
    CHECK(s.ema == 2.0);
    s.update(1.0);
    CHECK(s.ema == doctest::Approx(0.99 * 2.0 + 0.01 * 1.0));
    CHECK(s.last == 1.0);
    CHECK(s.count == 2);
}

TEST_CASE("config validation") {
    auto c = tiny_predictor(0);
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_predictor(1);
    c.stream.seq_len = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    auto s = tiny_simulator(1);
    s.context_length = 20;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.context_length = 5;  // query of 15 exceeds n_ctx_dec
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = tiny_simulator(1);
    s.optimizer.lr = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("a single iteration writes a final checkpoint") {
    TempDir dir("train_single");
    auto c = tiny_predictor(1);
    c.out_dir = dir.path;
    const auto r = train::train(c);
    CHECK(r.log.size() == 1);
    CHECK(r.checkpoint.iteration == 1);
    CHECK(r.checkpoint.optimizer.step == 1);
    CHECK(fs::exists(checkpoint_path(dir.path, 1)));
    CHECK(latest_checkpoint(dir.path) == checkpoint_path(dir.path, 1));
    const auto loaded = load_checkpoint(latest_checkpoint(dir.path));
    CHECK(same_values(loaded.params, r.checkpoint.params));
}

TEST_CASE("periodic checkpoints and the training log") {
    TempDir dir("train_periodic");
    auto c = tiny_simulator(6);
    c.out_dir = dir.path;
    c.checkpoint_every = 2;
    (void)train::train(c);
    for (int it : {2, 4, 6}) CHECK(fs::exists(checkpoint_path(dir.path, it)));
    CHECK(latest_checkpoint(dir.path) == checkpoint_path(dir.path, 6));
    std::ifstream log(dir.path / "train_log.csv");
    std::string line;
    int rows = 0;
    std::getline(log, line);
    CHECK(line == "iteration,loss,ema_loss,wall_time_s");
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 6);
    CHECK(load_checkpoint(checkpoint_path(dir.path, 4)).iteration == 4);
}

TEST_CASE("checkpoint round trip and corruption") {
    TempDir dir("train_ckpt");
    const auto r = train::train(tiny_simulator(3));
    const auto p = dir.path / "a.bin";
    save_checkpoint(r.checkpoint, p);
    const auto back = load_checkpoint(p);
    CHECK(back.model == r.checkpoint.model);
    CHECK(back.iteration == 3);
    CHECK(back.global_seed == 10);
    CHECK(back.optimizer.hyper == r.checkpoint.optimizer.hyper);
    CHECK(back.loss.ema == r.checkpoint.loss.ema);
    CHECK(same_values(back.params, r.checkpoint.params));
    CHECK(same_values(back.optimizer.m, r.checkpoint.optimizer.m));
    CHECK(same_values(back.optimizer.v, r.checkpoint.optimizer.v));
    save_checkpoint(back, dir.path / "b.bin");
    CHECK(bytes_of(p) == bytes_of(dir.path / "b.bin"));

    const std::string good = bytes_of(p);
    const auto write = [&](const std::string& s) {
        std::ofstream(dir.path / "bad.bin", std::ios::binary) << s;
        return dir.path / "bad.bin";
    };
    CHECK_THROWS_AS(load_checkpoint(write(good.substr(0, good.size() / 2))), IntegrityError);
    std::string flip = good;
    flip[good.size() - 40] = static_cast<char>(flip[good.size() - 40] ^ 1);
    CHECK_THROWS_AS(load_checkpoint(write(flip)), IntegrityError);
    std::string ver = good;
    ver[8] = 2;
    CHECK_THROWS_AS(load_checkpoint(write(ver)), UnsupportedVersionError);
    CHECK_THROWS_AS(load_checkpoint(write("MSIDCK")), IntegrityError);
    CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.bin"), ConfigError);
}

TEST_CASE("warm start requires a matching architecture") {
    TempDir dir("train_warm");
    auto c = tiny_simulator(2);
    c.out_dir = dir.path / "lti";
    const auto lti = train::train(c);
    const auto path = latest_checkpoint(c.out_dir);

    const auto start = warm_start(path, c.model);
    CHECK(same_values(start, lti.checkpoint.params));

    auto wh = tiny_simulator(1);
    wh.stream.system_class = data::SystemClass::Wh;
    wh.warm_start_path = path;
    wh.optimizer.lr = 1e-12;
    wh.warmup_iters = 0;
    const auto r = train::train(wh);
    // One tiny step away from the warm-start values.
    const auto& a = r.checkpoint.params.at("head.weight").value;
    const auto& b = lti.checkpoint.params.at("head.weight").value;
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6f);

    CHECK_THROWS_AS(warm_start(path, ModelSpec::simulator({1, 2, 16, 12, 8, 1, 1})), ConfigError);
    CHECK_THROWS_AS(warm_start(path, ModelSpec::predictor({1, 2, 8, 16, 1, 1})), ConfigError);
}

TEST_CASE("training reduces the loss") {
    auto c = tiny_predictor(200);
    const auto r = train::train(c);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 20; ++i) {
        first += r.log[std::size_t(i)].loss / 20.0;
        last += r.log[r.log.size() - 1 - std::size_t(i)].loss / 20.0;
    }
    INFO("first ", first, " last ", last);
    CHECK(last < first);
    CHECK(r.checkpoint.loss.count == 200);
}

TEST_CASE("runs are reproducible and consume fresh datasets") {
    auto c = tiny_simulator(8);
    c.record_seeds = true;
    const auto a = train::train(c), b = train::train(c);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(same_values(a.checkpoint.params, b.checkpoint.params));
    CHECK(a.consumed_seeds.size() == 32);
    CHECK(std::set<std::uint64_t>(a.consumed_seeds.begin(), a.consumed_seeds.end()).size() == 32);
}

TEST_CASE("divergence stops training with a diagnostic checkpoint") {
    TempDir dir("train_diverge");
    auto c = tiny_predictor(50);
    c.out_dir = dir.path;
    c.optimizer.lr = 1e30;
    c.warmup_iters = 0;
    c.clip_norm = 0.0;
    try {
        (void)train::train(c);
        FAIL("expected TrainingDivergedError");
    } catch (const TrainingDivergedError& e) {
        CHECK(fs::exists(e.diagnostic_checkpoint));
        CHECK(fs::path(e.diagnostic_checkpoint).parent_path() == dir.path);
        CHECK_NOTHROW((void)load_checkpoint(e.diagnostic_checkpoint));
    }
}

TEST_CASE("model spec records") {
    const auto p = ModelSpec::predictor({});
    CHECK(ModelSpec::from_json(p.to_json()) == p);
    const auto s = ModelSpec::simulator({});
    CHECK(ModelSpec::from_json(s.to_json()) == s);
    CHECK_FALSE(p == s);
    MetaModel m(p, 0);
    CHECK_THROWS_AS((void)m.simulator(), ConfigError);
    CHECK_NOTHROW((void)m.predictor());
}

TEST_CASE("final linear decay") {
    auto c = tiny_predictor(10);
    c.optimizer.lr = 1e-3;
    c.warmup_iters = 2;
    c.decay_iters = 4;
    CHECK(learning_rate_at(c, 0) == doctest::Approx(5e-4));
    CHECK(learning_rate_at(c, 5) == 1e-3);
    CHECK(learning_rate_at(c, 6) == 1e-3);
    CHECK(learning_rate_at(c, 7) == doctest::Approx(0.75e-3));
    CHECK(learning_rate_at(c, 9) == doctest::Approx(0.25e-3));
    c.decay_iters = 0;
    CHECK(learning_rate_at(c, 9) == 1e-3);
    c.decay_iters = 11;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("resuming reproduces an uninterrupted run bitwise") {
    TempDir dir("train_resume");
    // Constant-lr run checkpointed at 5, continued with a decay over 6..8.
    auto a = tiny_simulator(8);
    a.out_dir = dir.path / "a";
    a.checkpoint_every = 5;
    (void)train::train(a);

    auto straight = tiny_simulator(8);
    straight.decay_iters = 3;
    const auto c = train::train(straight);

    auto b = straight;
    b.resume_from = checkpoint_path(a.out_dir, 5);
    b.out_dir = dir.path / "b";
    const auto r = train::train(b);
    REQUIRE(r.log.size() == 3);
    CHECK(r.log.front().iteration == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(r.log[i].loss == c.log[5 + i].loss);
    CHECK(same_values(r.checkpoint.params, c.checkpoint.params));
    CHECK(same_values(r.checkpoint.optimizer.m, c.checkpoint.optimizer.m));
    CHECK(r.checkpoint.optimizer.step == 8);
    CHECK(r.checkpoint.loss.ema == c.checkpoint.loss.ema);
    CHECK(r.checkpoint.loss.count == 8);
    CHECK(latest_checkpoint(b.out_dir) == checkpoint_path(b.out_dir, 8));

    auto bad = tiny_simulator(8);
    bad.model = ModelSpec::simulator({1, 2, 16, 12, 8, 1, 1});
    bad.resume_from = checkpoint_path(a.out_dir, 5);
    CHECK_THROWS_AS(train::train(bad), ConfigError);
    bad = tiny_simulator(8);
    bad.stream.global_seed = 11;
    bad.resume_from = checkpoint_path(a.out_dir, 5);
    CHECK_THROWS_AS(train::train(bad), ConfigError);
    bad = tiny_simulator(5);
    bad.resume_from = checkpoint_path(a.out_dir, 5);
    CHECK_THROWS_AS(train::train(bad), ConfigError);
    bad.warm_start_path = checkpoint_path(a.out_dir, 5);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
