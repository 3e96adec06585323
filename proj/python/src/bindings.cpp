#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "metasysid/config.hpp"
#include "metasysid/errors.hpp"
#include "metasysid/eval.hpp"
#include "metasysid/trainer.hpp"

namespace py = pybind11;
using namespace metasysid;
using nlohmann::json;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

std::span<const double> view(const Array& a) {
    if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
    return {a.data(), static_cast<std::size_t>(a.size())};
}

Array to_array(const std::vector<double>& v) {
    Array out(py::array::ShapeContainer{static_cast<py::ssize_t>(v.size())});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Array to_array(const SeqTensor<float>& t) {
    Array out(py::array::ShapeContainer{py::ssize_t{t.batch}, py::ssize_t{t.steps}});
    auto m = out.mutable_unchecked<2>();
    for (int b = 0; b < t.batch; ++b)
        for (int s = 0; s < t.steps; ++s) m(b, s) = t(b, s, 0);
    return out;
}

std::string report_json(const eval::EvalReport& r) {
    return json{{"task", r.task},
                {"method", r.method},
                {"system_class", data::to_string(r.system_class)},
                {"noise_std", r.noise_std},
                {"n_test", r.n_test()},
                {"seq_len", r.seq_len},
                {"context_length", r.context_length},
                {"skip", r.skip},
                {"eval_seed", r.eval_seed},
                {"mean_rmse", r.mean_rmse()},
                {"median_rmse", r.median_rmse()},
                {"seeds", r.seeds},
                {"rmse", r.rmse},
                {"rmse_unskipped", r.rmse_unskipped},
                {"curve", r.curve},
                {"curve_first_step", r.curve_first_step}}
        .dump();
}

config::RunConfig run_config(const std::string& cfg) { return config::parse_run_config(json::parse(cfg)); }

std::unique_ptr<train::MetaModel> load_model(const std::string& path) {
    std::filesystem::path p = path;
    if (std::filesystem::is_directory(p)) p = train::latest_checkpoint(p);
    return train::instantiate(train::load_checkpoint(p));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "In-context system identification core (JSON strings in, JSON strings and arrays out)";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_IOError);

    m.def("resolve_config", [](const std::string& cfg) { return config::to_json(run_config(cfg)).dump(); });

    m.def("make_batch",
          [](const std::string& stream, std::int64_t iteration, bool eval_space) {
              const auto b = data::make_batch(config::stream_from_json(json::parse(stream)), iteration,
                                              eval_space ? SeedSpace::Eval : SeedSpace::Train);
              return py::make_tuple(to_array(b.u), to_array(b.y), b.seeds);
          },
          py::arg("stream"), py::arg("iteration"), py::arg("eval_space") = false);

    m.def("generate_dataset",
          [](const std::string& stream, std::uint64_t seed) {
              const auto d = data::generate_dataset(config::stream_from_json(json::parse(stream)), seed);
              return py::make_tuple(to_array(d.u), to_array(d.y));
          },
          py::arg("stream"), py::arg("seed"));

    m.def("train",
          [](const std::string& cfg, const std::string& out_dir, bool verbose) {
              train::TrainConfig t = run_config(cfg).train_config();
              t.out_dir = out_dir;
              t.verbose = verbose;
              train::TrainResult r;
              {
                  py::gil_scoped_release release;
                  r = train::train(t);
              }
              std::string path = out_dir.empty() ? "" : train::latest_checkpoint(out_dir).string();
              return json{{"iteration", r.checkpoint.iteration},
                          {"ema_loss", r.checkpoint.loss.ema},
                          {"last_loss", r.checkpoint.loss.last},
                          {"checkpoint", path}}
                  .dump();
          },
          py::arg("config"), py::arg("out_dir") = "", py::arg("verbose") = false);

    m.def("checkpoint_info", [](const std::string& path) {
        const auto c = train::load_checkpoint(path);
        return json{{"model", c.model.to_json()},
                    {"iteration", c.iteration},
                    {"global_seed", c.global_seed},
                    {"ema_loss", c.loss.ema},
                    {"parameter_count", c.params.num_elements()}}
            .dump();
    });

    m.def("parameter_count", [](const std::string& model) {
        return train::MetaModel(train::ModelSpec::from_json(json::parse(model)), 0).params().num_elements();
    });

    m.def("evaluate", [](const std::string& checkpoint, const std::string& cfg) {
        const auto net = load_model(checkpoint);
        const auto e = run_config(cfg).eval_config();
        py::gil_scoped_release release;
        return report_json(net->spec().kind == train::ModelKind::DecoderOnly
                               ? eval::eval_prediction(net->predictor(), e)
                               : eval::eval_simulation(net->simulator(), e));
    });

    m.def("noise_sweep", [](const std::string& checkpoint, const std::string& cfg) {
        const auto net = load_model(checkpoint);
        const auto rc = run_config(cfg);
        std::vector<eval::SweepRow> rows;
        {
            py::gil_scoped_release release;
            rows = eval::noise_sweep(net->simulator(), rc.eval_config(), rc.eval.sigma_grid);
        }
        std::vector<std::string> out;
        for (const auto& r : rows) out.push_back(report_json(r.report));
        return out;
    });

    m.def("shift_eval", [](const std::string& checkpoint, const std::string& cfg) {
        const auto net = load_model(checkpoint);
        const auto rc = run_config(cfg);
        py::gil_scoped_release release;
        const auto r = eval::distribution_shift_eval(net->simulator(), rc.eval_config(), rc.eval.shifted_region);
        return std::make_pair(report_json(r.nominal), report_json(r.shifted));
    });

    m.def("baseline_eval", [](const std::string& cfg, const std::string& method) {
        const auto rc = run_config(cfg);
        auto e = rc.eval_config();
        if (e.context_length <= 0) e.context_length = e.stream.seq_len - e.stream.seq_len / 5;
        if (method != "subspace" && method != "arx") throw ConfigError("unknown baseline method " + method);
        py::gil_scoped_release release;
        return report_json(eval::eval_baseline(
            method == "subspace" ? eval::BaselineMethod::Subspace : eval::BaselineMethod::Arx, e, rc.eval.subspace,
            rc.eval.arx));
    });

    m.def("baseline_simulate",
          [](const Array& u_context, const Array& y_context, const Array& u_query, int order) {
              baseline::SubspaceOptions o;
              o.order = order;
              return to_array(baseline::baseline_simulate(view(u_context), view(y_context), view(u_query), o));
          },
          py::arg("u_context"), py::arg("y_context"), py::arg("u_query"), py::arg("order") = 0);

    m.def("fit_arx",
          [](const Array& u, const Array& y, int na, int nb, int nk, bool intercept) {
              baseline::ArxFitOptions o;
              o.nk = nk;
              o.intercept = intercept;
              const auto a = baseline::fit_arx_ls(view(u), view(y), na, nb, o);
              return py::make_tuple(to_array(std::vector<double>(a.a.begin(), a.a.end())),
                                    to_array(std::vector<double>(a.b.begin(), a.b.end())), a.c);
          },
          py::arg("u"), py::arg("y"), py::arg("na"), py::arg("nb"), py::arg("nk") = 1, py::arg("intercept") = false);

    m.def("rmse", [](const Array& y, const Array& yhat, int skip) { return eval::rmse(view(y), view(yhat), skip); },
          py::arg("y"), py::arg("yhat"), py::arg("skip") = 0);
}
