#include "metasysid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <zlib.h>

#include "metasysid/errors.hpp"

namespace metasysid::train {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'M', 'S', 'I', 'D', 'C', 'K', 'P', 'T'};

template <class V>
void put(std::ostream& out, const V& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <class V>
V get(std::istream& in) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(V));
    if (!in) throw IntegrityError("checkpoint: unexpected end of data");
    return value;
}

std::uint32_t crc_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void write_atomically(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_latest_marker(const fs::path& dir, const fs::path& ckpt) {
    write_atomically(dir / "latest", ckpt.filename().string() + "\n");
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelSpec / MetaModel

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
    if (model::is_encoder_decoder_json(j)) return simulator(model::encoder_decoder_config_from_json(j));
    return predictor(model::decoder_only_config_from_json(j));
}

nlohmann::json ModelSpec::to_json() const {
    return kind == ModelKind::DecoderOnly ? model::to_json(decoder_only) : model::to_json(encoder_decoder);
}

MetaModel::MetaModel(const ModelSpec& spec, std::uint64_t init_seed) : spec_(spec) {
    if (spec_.kind == ModelKind::DecoderOnly)
        predictor_ = std::make_unique<model::DecoderOnlyModel<float>>(spec_.decoder_only, init_seed);
    else
        simulator_ = std::make_unique<model::EncoderDecoderModel<float>>(spec_.encoder_decoder, init_seed);
}

nn::ParamStore<float>& MetaModel::params() { return predictor_ ? predictor_->params() : simulator_->params(); }
const nn::ParamStore<float>& MetaModel::params() const {
    return predictor_ ? predictor_->params() : simulator_->params();
}

model::DecoderOnlyModel<float>& MetaModel::predictor() {
    if (!predictor_) throw ConfigError("model is an encoder-decoder simulator, not a predictor");
    return *predictor_;
}
const model::DecoderOnlyModel<float>& MetaModel::predictor() const {
    if (!predictor_) throw ConfigError("model is an encoder-decoder simulator, not a predictor");
    return *predictor_;
}
model::EncoderDecoderModel<float>& MetaModel::simulator() {
    if (!simulator_) throw ConfigError("model is a decoder-only predictor, not a simulator");
    return *simulator_;
}
const model::EncoderDecoderModel<float>& MetaModel::simulator() const {
    if (!simulator_) throw ConfigError("model is a decoder-only predictor, not a simulator");
    return *simulator_;
}

float MetaModel::loss(const data::SequenceBatch& batch, int context_length, bool backprop) {
    if (predictor_) return model::one_step_loss(*predictor_, batch.u, batch.y, backprop);
    return model::sim_loss(*simulator_, data::split_context_query(batch, context_length), backprop);
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
    stream.validate();
    if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
    if (!(optimizer.lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0))
        throw ConfigError("AdamW betas must lie in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw ConfigError("AdamW eps must be > 0");
    if (optimizer.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
    if (decay_iters < 0 || decay_iters > n_iterations) throw ConfigError("decay_iters must lie in [0, n_iterations]");
    if (warm_start_path && resume_from) throw ConfigError("warm_start_path and resume_from are exclusive");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    if (model.kind == ModelKind::DecoderOnly) {
        model.decoder_only.validate();
        if (stream.seq_len > model.decoder_only.n_ctx + 1)
            throw ConfigError("predictor: seq_len must be <= n_ctx + 1");
    } else {
        model.encoder_decoder.validate();
        const int m = resolved_context_length();
        if (m < 1 || m >= stream.seq_len) throw ConfigError("simulator: context length must satisfy 1 <= m < seq_len");
        if (m > model.encoder_decoder.n_ctx_enc) throw ConfigError("simulator: context length exceeds n_ctx_enc");
        if (stream.seq_len - m > model.encoder_decoder.n_ctx_dec)
            throw ConfigError("simulator: query length exceeds n_ctx_dec");
    }
}

int TrainConfig::resolved_context_length() const {
    return context_length > 0 ? context_length : model.encoder_decoder.n_ctx_enc;
}

double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration) {
    double lr = cfg.optimizer.lr;
    if (cfg.warmup_iters > 0 && iteration < cfg.warmup_iters)
        lr = cfg.optimizer.lr * static_cast<double>(iteration + 1) / static_cast<double>(cfg.warmup_iters);
    if (cfg.decay_iters > 0 && iteration >= cfg.n_iterations - cfg.decay_iters)
        lr *= static_cast<double>(cfg.n_iterations - iteration) / static_cast<double>(cfg.decay_iters);
    return lr;
}

void LossStats::update(double loss) {
    last = loss;
    ema = count == 0 ? loss : kEmaDecay * ema + (1.0 - kEmaDecay) * loss;
    ++count;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
    std::ostringstream payload(std::ios::binary);
    const std::string spec = ckpt.model.to_json().dump();
    put<std::uint32_t>(payload, static_cast<std::uint32_t>(spec.size()));
    payload.write(spec.data(), static_cast<std::streamsize>(spec.size()));
    put<std::int64_t>(payload, ckpt.iteration);
    put<std::uint64_t>(payload, ckpt.global_seed);
    put<double>(payload, ckpt.loss.ema);
    put<double>(payload, ckpt.loss.last);
    put<std::int64_t>(payload, ckpt.loss.count);
    const auto& h = ckpt.optimizer.hyper;
    put<std::int64_t>(payload, ckpt.optimizer.step);
    for (double v : {h.lr, h.beta1, h.beta2, h.eps, h.weight_decay}) put<double>(payload, v);
    nn::write_param_store(payload, ckpt.params);
    nn::write_param_store(payload, ckpt.optimizer.m);
    nn::write_param_store(payload, ckpt.optimizer.v);
    const std::string body = payload.str();

    std::ostringstream file(std::ios::binary);
    file.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(file, Checkpoint::kFormatVersion);
    put<std::uint64_t>(file, body.size());
    file.write(body.data(), static_cast<std::streamsize>(body.size()));
    put<std::uint32_t>(file, crc_of(body));
    write_atomically(path, file.str());
}

Checkpoint load_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream file(bytes, std::ios::binary);

    char magic[8];
    file.read(magic, sizeof magic);
    if (!file || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IntegrityError("checkpoint: bad magic");
    const auto version = get<std::uint32_t>(file);
    if (version != Checkpoint::kFormatVersion) throw UnsupportedVersionError(version, Checkpoint::kFormatVersion);
    const auto size = get<std::uint64_t>(file);
    constexpr std::size_t kHeader = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() != kHeader + size + sizeof(std::uint32_t))
        throw IntegrityError("checkpoint: file size does not match header (truncated or padded)");
    const std::string body = bytes.substr(kHeader, size);
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, bytes.data() + kHeader + size, sizeof stored_crc);
    if (stored_crc != crc_of(body)) throw IntegrityError("checkpoint: checksum mismatch");

    std::istringstream payload(body, std::ios::binary);
    Checkpoint c;
    const auto spec_len = get<std::uint32_t>(payload);
    if (spec_len > body.size()) throw IntegrityError("checkpoint: bad config length");
    std::string spec(spec_len, '\0');
    payload.read(spec.data(), spec_len);
    try {
        c.model = ModelSpec::from_json(nlohmann::json::parse(spec));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: unreadable model config: ") + e.what());
    }
    c.iteration = get<std::int64_t>(payload);
    c.global_seed = get<std::uint64_t>(payload);
    c.loss.ema = get<double>(payload);
    c.loss.last = get<double>(payload);
    c.loss.count = get<std::int64_t>(payload);
    c.optimizer.step = get<std::int64_t>(payload);
    auto& h = c.optimizer.hyper;
    for (double* v : {&h.lr, &h.beta1, &h.beta2, &h.eps, &h.weight_decay}) *v = get<double>(payload);
    c.params = nn::read_param_store<float>(payload);
    c.optimizer.m = nn::read_param_store<float>(payload);
    c.optimizer.v = nn::read_param_store<float>(payload);
    return c;
}

std::unique_ptr<MetaModel> instantiate(const Checkpoint& ckpt) {
    auto m = std::make_unique<MetaModel>(ckpt.model, ckpt.global_seed);
    m->params().copy_values_from(ckpt.params);
    return m;
}

nn::ParamStore<float> warm_start(const fs::path& checkpoint_path, const ModelSpec& new_model) {
    Checkpoint c = load_checkpoint(checkpoint_path);
    if (!(c.model == new_model))
        throw ConfigError("warm start: checkpoint model config " + c.model.to_json().dump() +
                          " differs from requested " + new_model.to_json().dump());
    // Names and shapes are checked against a freshly built model of the new spec.
    MetaModel probe(new_model, 0);
    probe.params().copy_values_from(c.params);
    return std::move(c.params);
}

fs::path checkpoint_path(const fs::path& dir, std::int64_t iteration) {
    return dir / ("ckpt_" + std::to_string(iteration) + ".bin");
}

fs::path latest_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "latest");
    std::string name;
    if (!in || !std::getline(in, name) || name.empty())
        throw ConfigError("no 'latest' marker in " + dir.string());
    return dir / name;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const TrainConfig& cfg) {
    cfg.validate();
    const bool to_disk = !cfg.out_dir.empty();
    if (to_disk) fs::create_directories(cfg.out_dir);

    MetaModel net(cfg.model, cfg.stream.global_seed);
    if (cfg.warm_start_path) net.params().copy_values_from(warm_start(*cfg.warm_start_path, cfg.model));

    TrainResult result;
    Checkpoint& ckpt = result.checkpoint;
    ckpt.model = cfg.model;
    ckpt.global_seed = cfg.stream.global_seed;
    ckpt.optimizer = nn::make_adamw_state(net.params(), cfg.optimizer);
    std::int64_t first = 0;
    if (cfg.resume_from) {
        Checkpoint prev = load_checkpoint(*cfg.resume_from);
        if (!(prev.model == cfg.model)) throw ConfigError("resume: checkpoint model config differs from the run's");
        if (prev.global_seed != cfg.stream.global_seed)
            throw ConfigError("resume: checkpoint global_seed differs from stream.global_seed");
        if (prev.iteration >= cfg.n_iterations)
            throw ConfigError("resume: checkpoint is already at iteration " + std::to_string(prev.iteration));
        net.params().copy_values_from(prev.params);
        ckpt.optimizer.m = std::move(prev.optimizer.m);
        ckpt.optimizer.v = std::move(prev.optimizer.v);
        ckpt.optimizer.step = prev.optimizer.step;
        ckpt.loss = prev.loss;
        first = prev.iteration;
    }

    const auto snapshot = [&](std::int64_t iteration) {
        ckpt.iteration = iteration;
        ckpt.params = net.params().cast<float>();
    };

    std::ofstream log_file;
    if (to_disk) {
        log_file.open(cfg.out_dir / "train_log.csv", std::ios::trunc);
        if (!log_file) throw std::runtime_error("cannot open train_log.csv in " + cfg.out_dir.string());
        log_file << "iteration,loss,ema_loss,wall_time_s\n";
    }

    const int m = cfg.model.kind == ModelKind::EncoderDecoder ? cfg.resolved_context_length() : 0;
    const auto start = std::chrono::steady_clock::now();
    result.log.reserve(static_cast<std::size_t>(cfg.n_iterations - first));
    for (std::int64_t it = first; it < cfg.n_iterations; ++it) {
        const data::SequenceBatch batch = data::make_batch(cfg.stream, it);
        if (cfg.record_seeds)
            result.consumed_seeds.insert(result.consumed_seeds.end(), batch.seeds.begin(), batch.seeds.end());
        const double loss = net.loss(batch, m, true);
        if (!std::isfinite(loss)) {
            snapshot(it);
            const fs::path dir = to_disk ? cfg.out_dir : fs::temp_directory_path();
            const fs::path diag = dir / ("ckpt_diag_" + std::to_string(it) + ".bin");
            save_checkpoint(ckpt, diag);
            throw TrainingDivergedError("non-finite loss at iteration " + std::to_string(it), diag.string());
        }
        nn::clip_grad_norm(net.params(), cfg.clip_norm);
        nn::adamw_step(net.params(), ckpt.optimizer, learning_rate_at(cfg, it));
        ckpt.loss.update(loss);

        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const LogRow row{it + 1, loss, ckpt.loss.ema, wall};
        result.log.push_back(row);
        if (to_disk) {
            char line[128];
            std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.3f\n", static_cast<long long>(row.iteration), row.loss,
                          row.ema_loss, row.wall_time_s);
            log_file << line;
        }
        if (cfg.verbose && cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) {
            std::fprintf(stderr, "[train] iter %lld loss %.5f ema %.5f lr %.2e %.1fs\n",
                         static_cast<long long>(it + 1), loss, ckpt.loss.ema, learning_rate_at(cfg, it), wall);
        }
        if (to_disk && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.n_iterations) {
            snapshot(it + 1);
            const fs::path p = checkpoint_path(cfg.out_dir, it + 1);
            log_file.flush();
            save_checkpoint(ckpt, p);
            write_latest_marker(cfg.out_dir, p);
        }
    }
    snapshot(cfg.n_iterations);
    if (to_disk) {
        log_file.flush();
        const fs::path p = checkpoint_path(cfg.out_dir, cfg.n_iterations);
        save_checkpoint(ckpt, p);
        write_latest_marker(cfg.out_dir, p);
    }
    return result;
}

}  // namespace metasysid::train
