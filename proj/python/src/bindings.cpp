#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vmus/cli.hpp"
#include "vmus/config.hpp"
#include "vmus/container.hpp"
#include "vmus/error.hpp"
#include "vmus/evaluation.hpp"
#include "vmus/rhythm.hpp"
#include "vmus/synthetic.hpp"
#include "vmus/training.hpp"

namespace py = pybind11;
using namespace vmus;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.values().begin(), t.values().end(), a.mutable_data());
    return a;
}

ScenarioSpec scenario_from(const std::string& config_json) {
    RunConfig rc;
    if (!config_json.empty()) rc.merge_json(nlohmann::json::parse(config_json));
    rc.scenario.seed = rc.seed;
    return rc.scenario;
}

py::dict clip_dict(const ClipRecord& c) {
    py::dict d;
    d["clip_id"] = c.clip_id;
    d["label"] = c.label;
    d["seconds"] = c.seconds;
    d["tokens"] = c.tokens;
    d["cut_times"] = c.cut_times;
    d["beat_times"] = c.beat_times;
    d["global_features"] = to_numpy(c.global.features);
    d["local_features"] = to_numpy(c.local.features);
    return d;
}

// A loaded checkpoint. Inputs are scored with the conditioning of the
// stage the checkpoint was trained for.
struct PyModel {
    Checkpoint ck;

    py::array_t<double> logits(const std::vector<int>& tokens, const std::string& clip_path) const {
        const ClipRecord clip = read_clip(clip_path);
        const TrainingExample ex =
            make_examples({clip}, RhythmSource::local, ck.model->config().backbone.token_rate)[0];
        return to_numpy(ck.model->logits(tokens, stage_input(*ck.model, ex, ck.stage)));
    }

    std::vector<int> generate(const std::string& clip_path, bool semantic, std::uint64_t seed) const {
        EvalSettings es;
        es.use_semantic = semantic;
        es.seed = seed;
        return generate_for_clip(*ck.model, read_clip(clip_path), es);
    }

    py::dict param_counts() const {
        const ParamCounts c = ck.model->params().count();
        py::dict d;
        d["trainable"] = c.trainable;
        d["frozen"] = c.frozen;
        return d;
    }
};

}  // namespace

PYBIND11_MODULE(_vidmus, m) {
    m.doc() = "Bindings for the vidmus core library";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ContainerError>(m, "ContainerError", base.ptr());

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs a vmus subcommand in-process; returns (exit code, stdout, stderr).");

    m.def(
        "compute_distance_sequence",
        [](const std::vector<double>& sim) { return compute_distance_sequence(sim).d; }, py::arg("sim"),
        "Token-rate distance sequence from per-frame similarities.");

    m.def(
        "rhythm_recall",
        [](const std::vector<double>& cuts, const std::vector<double>& beats, double tol) {
            return rhythm_recall(cuts, beats, tol);
        },
        py::arg("cuts"), py::arg("beats"), py::arg("tol") = 0.1);

    m.def(
        "mean_patch_similarity",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> local, double fps) {
            if (local.ndim() != 3) throw InvalidArgument("local features must be frames x patches x width");
            Shape shape{static_cast<std::size_t>(local.shape(0)), static_cast<std::size_t>(local.shape(1)),
                        static_cast<std::size_t>(local.shape(2))};
            std::vector<double> data(local.data(), local.data() + local.size());
            return mean_patch_similarity(LocalFeatureSeq{Tensor(shape, std::move(data)), fps, "array"});
        },
        py::arg("local"), py::arg("fps") = 25.0);

    m.def(
        "generate_clip",
        [](const std::string& clip_id, int label, const std::string& config_json) {
            const ScenarioSpec spec = scenario_from(config_json);
            Rng rng(spec.seed, "clip/" + clip_id);
            return clip_dict(generate_clip(spec, clip_id, label, rng));
        },
        py::arg("clip_id"), py::arg("label"), py::arg("config_json") = "",
        "Generates one synthetic clip; config_json overrides run-config defaults.");

    m.def(
        "read_clip", [](const std::filesystem::path& path) { return clip_dict(read_clip(path)); }, py::arg("path"));

    m.def(
        "semantic_proxy_predict",
        [](const std::vector<int>& tokens, const std::string& config_json) {
            return SemanticProxy(scenario_from(config_json)).predict(tokens);
        },
        py::arg("tokens"), py::arg("config_json") = "");

    m.def(
        "default_config", [] { return RunConfig{}.to_json().dump(2); }, "Resolved defaults as JSON text.");

    py::class_<PyModel>(m, "Model")
        .def_static(
            "load", [](const std::filesystem::path& path) { return PyModel{load_checkpoint(path)}; }, py::arg("path"))
        .def_property_readonly("stage", [](const PyModel& p) { return p.ck.stage; })
        .def_property_readonly("config_json", [](const PyModel& p) { return p.ck.model->config().to_json().dump(); })
        .def("param_counts", &PyModel::param_counts)
        .def("logits", &PyModel::logits, py::arg("tokens"), py::arg("clip_path"))
        .def("generate", &PyModel::generate, py::arg("clip_path"), py::arg("semantic") = true, py::arg("seed") = 7);
}
