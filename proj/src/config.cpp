#include "metasysid/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "metasysid/errors.hpp"

namespace metasysid::config {

using nlohmann::json;

namespace {

// Walks an object, dispatching known keys and rejecting the rest.
void read_section(const json& j, const std::string& where, const std::map<std::string, std::function<void(const json&)>>& handlers) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        const auto it = handlers.find(key);
        if (it == handlers.end()) throw ConfigError(where + ": unknown key '" + key + "'");
        try {
            it->second(value);
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            throw ConfigError(where + "." + key + ": " + e.what());
        }
    }
}

int as_int(const json& v) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    return v.get<int>();
}
std::int64_t as_int64(const json& v) {
    if (!v.is_number_integer()) throw ConfigError("expected an integer");
    return v.get<std::int64_t>();
}
std::uint64_t as_uint64(const json& v) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
        throw ConfigError("expected a non-negative integer");
    return v.get<std::uint64_t>();
}
double as_double(const json& v) {
    if (!v.is_number()) throw ConfigError("expected a number");
    return v.get<double>();
}
bool as_bool(const json& v) {
    if (!v.is_boolean()) throw ConfigError("expected a boolean");
    return v.get<bool>();
}
std::string as_string(const json& v) {
    if (!v.is_string()) throw ConfigError("expected a string");
    return v.get<std::string>();
}

template <class F>
auto with_context(const std::string& where, F&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

}  // namespace

json stream_to_json(const data::StreamConfig& s) {
    return {{"system_class", data::to_string(s.system_class)},
            {"seq_len", s.seq_len},
            {"batch_size", s.batch_size},
            {"global_seed", s.global_seed},
            {"region", sysgen::to_json(s.region)},
            {"lti_order_min", s.lti_order_min},
            {"lti_order_max", s.lti_order_max},
            {"wh_order_min", s.wh_order_min},
            {"wh_order_max", s.wh_order_max},
            {"wh_hidden", s.wh_hidden},
            {"noise_std", s.noise_std}};
}

data::StreamConfig stream_from_json(const json& j) {
    data::StreamConfig s;
    read_section(j, "stream",
                 {{"system_class", [&](const json& v) { s.system_class = data::parse_system_class(as_string(v)); }},
                  {"seq_len", [&](const json& v) { s.seq_len = as_int(v); }},
                  {"batch_size", [&](const json& v) { s.batch_size = as_int(v); }},
                  {"global_seed", [&](const json& v) { s.global_seed = as_uint64(v); }},
                  {"region", [&](const json& v) { s.region = sysgen::region_from_json(v); }},
                  {"lti_order_min", [&](const json& v) { s.lti_order_min = as_int(v); }},
                  {"lti_order_max", [&](const json& v) { s.lti_order_max = as_int(v); }},
                  {"wh_order_min", [&](const json& v) { s.wh_order_min = as_int(v); }},
                  {"wh_order_max", [&](const json& v) { s.wh_order_max = as_int(v); }},
                  {"wh_hidden", [&](const json& v) { s.wh_hidden = as_int(v); }},
                  {"noise_std", [&](const json& v) { s.noise_std = as_double(v); }}});
    with_context("stream", [&] { s.validate(); });
    return s;
}

namespace {

json train_to_json(const train::TrainConfig& t) {
    json j = {{"n_iterations", t.n_iterations},
              {"lr", t.optimizer.lr},
              {"beta1", t.optimizer.beta1},
              {"beta2", t.optimizer.beta2},
              {"eps", t.optimizer.eps},
              {"weight_decay", t.optimizer.weight_decay},
              {"warmup_iters", t.warmup_iters},
              {"clip_norm", t.clip_norm},
              {"checkpoint_every", t.checkpoint_every},
              {"log_every", t.log_every},
              {"context_length", t.context_length}};
    j["warm_start_path"] = t.warm_start_path ? json(t.warm_start_path->string()) : json(nullptr);
    // Omitted at their defaults so records written before they existed keep their fingerprints.
    if (t.decay_iters != 0) j["decay_iters"] = t.decay_iters;
    if (t.resume_from) j["resume_from"] = t.resume_from->string();
    return j;
}

void train_from_json(const json& j, train::TrainConfig& t) {
    read_section(j, "train",
                 {{"n_iterations", [&](const json& v) { t.n_iterations = as_int64(v); }},
                  {"lr", [&](const json& v) { t.optimizer.lr = as_double(v); }},
                  {"beta1", [&](const json& v) { t.optimizer.beta1 = as_double(v); }},
                  {"beta2", [&](const json& v) { t.optimizer.beta2 = as_double(v); }},
                  {"eps", [&](const json& v) { t.optimizer.eps = as_double(v); }},
                  {"weight_decay", [&](const json& v) { t.optimizer.weight_decay = as_double(v); }},
                  {"warmup_iters", [&](const json& v) { t.warmup_iters = as_int64(v); }},
                  {"decay_iters", [&](const json& v) { t.decay_iters = as_int64(v); }},
                  {"resume_from", [&](const json& v) {
                       if (v.is_null())
                           t.resume_from.reset();
                       else
                           t.resume_from = as_string(v);
                   }},
                  {"clip_norm", [&](const json& v) { t.clip_norm = as_double(v); }},
                  {"checkpoint_every", [&](const json& v) { t.checkpoint_every = as_int64(v); }},
                  {"log_every", [&](const json& v) { t.log_every = as_int64(v); }},
                  {"context_length", [&](const json& v) { t.context_length = as_int(v); }},
                  {"warm_start_path", [&](const json& v) {
                       if (v.is_null())
                           t.warm_start_path.reset();
                       else
                           t.warm_start_path = as_string(v);
                   }}});
}

json subspace_to_json(const baseline::SubspaceOptions& o) {
    return {{"order", o.order},
            {"max_order", o.max_order},
            {"markov_length", o.markov_length},
            {"state_window", o.state_window},
            {"fit_offset", o.fit_offset}};
}

json eval_to_json(const EvalSection& e) {
    json j = {{"n_test", e.n_test},
              {"noise_std", e.noise_std},
              {"skip", e.skip},
              {"context_length", e.context_length},
              {"seq_len", e.seq_len},
              {"chunk", e.chunk},
              {"sigma_grid", e.sigma_grid},
              {"shifted_region", sysgen::to_json(e.shifted_region)},
              {"subspace", subspace_to_json(e.subspace)},
              {"arx", {{"na", e.arx.na}, {"nb", e.arx.nb}, {"nk", e.arx.nk}, {"intercept", e.arx.intercept}}},
              {"methods", e.methods},
              {"min_shift_ratio", e.min_shift_ratio},
              {"monotone_tolerance", e.monotone_tolerance}};
    j["eval_seed"] = e.eval_seed ? json(*e.eval_seed) : json(nullptr);
    j["max_rmse"] = e.max_rmse ? json(*e.max_rmse) : json(nullptr);
    return j;
}

void eval_from_json(const json& j, EvalSection& e) {
    read_section(
        j, "eval",
        {{"n_test", [&](const json& v) { e.n_test = as_int(v); }},
         {"noise_std", [&](const json& v) { e.noise_std = as_double(v); }},
         {"skip", [&](const json& v) { e.skip = as_int(v); }},
         {"context_length", [&](const json& v) { e.context_length = as_int(v); }},
         {"seq_len", [&](const json& v) { e.seq_len = as_int(v); }},
         {"chunk", [&](const json& v) { e.chunk = as_int(v); }},
         {"eval_seed",
          [&](const json& v) {
              if (v.is_null())
                  e.eval_seed.reset();
              else
                  e.eval_seed = as_uint64(v);
          }},
         {"sigma_grid",
          [&](const json& v) {
              if (!v.is_array()) throw ConfigError("eval.sigma_grid: expected an array");
              e.sigma_grid.clear();
              for (const auto& x : v) e.sigma_grid.push_back(as_double(x));
          }},
         {"shifted_region", [&](const json& v) { e.shifted_region = sysgen::region_from_json(v); }},
         {"subspace",
          [&](const json& v) {
              read_section(v, "eval.subspace",
                           {{"order", [&](const json& x) { e.subspace.order = as_int(x); }},
                            {"max_order", [&](const json& x) { e.subspace.max_order = as_int(x); }},
                            {"markov_length", [&](const json& x) { e.subspace.markov_length = as_int(x); }},
                            {"state_window", [&](const json& x) { e.subspace.state_window = as_int(x); }},
                            {"fit_offset", [&](const json& x) { e.subspace.fit_offset = as_bool(x); }}});
          }},
         {"arx",
          [&](const json& v) {
              read_section(v, "eval.arx",
                           {{"na", [&](const json& x) { e.arx.na = as_int(x); }},
                            {"nb", [&](const json& x) { e.arx.nb = as_int(x); }},
                            {"nk", [&](const json& x) { e.arx.nk = as_int(x); }},
                            {"intercept", [&](const json& x) { e.arx.intercept = as_bool(x); }}});
          }},
         {"methods",
          [&](const json& v) {
              if (!v.is_array()) throw ConfigError("eval.methods: expected an array");
              e.methods.clear();
              for (const auto& x : v) {
                  const auto m = as_string(x);
                  if (m != "subspace" && m != "arx") throw ConfigError("eval.methods: unknown method '" + m + "'");
                  e.methods.push_back(m);
              }
          }},
         {"max_rmse",
          [&](const json& v) {
              if (v.is_null())
                  e.max_rmse.reset();
              else
                  e.max_rmse = as_double(v);
          }},
         {"min_shift_ratio", [&](const json& v) { e.min_shift_ratio = as_double(v); }},
         {"monotone_tolerance", [&](const json& v) { e.monotone_tolerance = as_double(v); }}});
}

}  // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    read_section(j, "config",
                 {{"stream", [&](const json& v) { cfg.stream = stream_from_json(v); }},
                  {"model",
                   [&](const json& v) {
                       cfg.model = with_context("model", [&] { return train::ModelSpec::from_json(v); });
                   }},
                  {"train", [&](const json& v) { train_from_json(v, cfg.train); }},
                  {"eval", [&](const json& v) { eval_from_json(v, cfg.eval); }}});
    return cfg;
}

json to_json(const RunConfig& cfg) {
    json j = {{"stream", stream_to_json(cfg.stream)},
              {"train", train_to_json(cfg.train)},
              {"eval", eval_to_json(cfg.eval)}};
    if (cfg.model) j["model"] = cfg.model->to_json();
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

train::TrainConfig RunConfig::train_config() const {
    if (!model) throw ConfigError("config has no model section");
    train::TrainConfig t = train;
    t.stream = stream;
    t.model = *model;
    return t;
}

eval::EvalConfig RunConfig::eval_config() const {
    eval::EvalConfig e;
    e.stream = stream;
    if (eval.seq_len > 0) e.stream.seq_len = eval.seq_len;
    if (eval.eval_seed) e.stream.global_seed = *eval.eval_seed;
    e.n_test = eval.n_test;
    e.noise_std = eval.noise_std;
    e.skip = eval.skip;
    e.context_length = eval.context_length > 0 ? eval.context_length : train.context_length;
    e.chunk = eval.chunk;
    return e;
}

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + key + "' is not a section");
        start = dot + 1;
    }
}

std::string fingerprint(const json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace metasysid::config
