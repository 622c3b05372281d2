#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "ofl/cli.hpp"
#include "ofl/eval_data.hpp"
#include "ofl/few_shot_learner.hpp"
#include "ofl/frozen_stack.hpp"
#include "ofl/memory_attention.hpp"
#include "ofl/pipeline.hpp"
#include "ofl/tensor.hpp"
#include "ofl/tensor_io.hpp"

namespace py = pybind11;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

ofl::Tensor to_tensor(const FloatArray& a) {
    if (a.ndim() < 1 || a.ndim() > 4) {
        throw ofl::ShapeError("array must have 1-4 axes");
    }
    std::vector<int> dims(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
    std::vector<float> data(a.data(), a.data() + a.size());
    return ofl::Tensor(std::move(dims), std::move(data));
}

py::array_t<float> from_tensor(const ofl::Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    py::array_t<float> a(shape);
    std::copy(t.data(), t.data() + t.numel(), a.mutable_data());
    return a;
}

nlohmann::json dict_to_json(const py::dict& d) {
    return nlohmann::json::parse(
        py::str(py::module_::import("json").attr("dumps")(d)).cast<std::string>());
}

py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

ofl::RunConfig config_from_dict(const py::dict& overrides) {
    nlohmann::json j = ofl::RunConfig::defaults().to_json();
    const nlohmann::json user = dict_to_json(overrides);
    for (const auto& [k, v] : user.items()) j[k] = v;
    return ofl::RunConfig::from_json(j);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "prompt-free online few-shot segmentation pipeline (C++ core)";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ofl::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ofl::ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<ofl::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ofl::FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ofl::StateError>(m, "StateError", PyExc_RuntimeError);
    py::register_exception<ofl::IoError>(m, "IoError", PyExc_OSError);

    // tensor kernels
    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& w, py::object bias) {
            ofl::Tensor b;
            const bool has_bias = !bias.is_none();
            if (has_bias) b = to_tensor(bias.cast<FloatArray>());
            return from_tensor(
                ofl::conv2d(to_tensor(x), to_tensor(w), has_bias ? &b : nullptr));
        },
        py::arg("input"), py::arg("weights"), py::arg("bias") = py::none(),
        "Same-padded stride-1 convolution: (C,H,W) x (O,C,k,k) -> (O,H,W)");
    m.def(
        "attention",
        [](const FloatArray& q, const FloatArray& k, const FloatArray& v) {
            return from_tensor(ofl::attention_core(to_tensor(q), to_tensor(k), to_tensor(v)));
        },
        py::arg("queries"), py::arg("keys"), py::arg("values"),
        "softmax(Q K^T / sqrt(d)) V with row-wise softmax");
    m.def(
        "losses",
        [](const FloatArray& pred, const FloatArray& gt) {
            return ofl::losses(to_tensor(pred), to_tensor(gt));
        },
        py::arg("pred"), py::arg("gt"), "(bce, soft_dice) of a probability map against a binary mask");
    m.def(
        "cosine_similarity",
        [](const FloatArray& a, const FloatArray& b) {
            return ofl::cosine_similarity(to_tensor(a), to_tensor(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "confidence",
        [](const FloatArray& prob, double threshold) {
            return ofl::confidence_score(to_tensor(prob), threshold);
        },
        py::arg("prob"), py::arg("threshold") = 0.5,
        "Mean probability over pixels above the threshold; 0 when none clear it");

    // metrics
    m.def(
        "dice",
        [](const FloatArray& p, const FloatArray& g) { return ofl::dice(to_tensor(p), to_tensor(g)); },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "avg_hausdorff",
        [](const FloatArray& p, const FloatArray& g) {
            return ofl::avg_hausdorff(to_tensor(p), to_tensor(g));
        },
        py::arg("pred"), py::arg("gt"));

    // mapping-network solver
    m.def(
        "fit_mapping",
        [](const std::vector<FloatArray>& features, const std::vector<FloatArray>& targets,
           double lam, int k, int iters) {
            if (features.empty() || features.size() != targets.size()) {
                throw ofl::ConfigError("fit_mapping: need matching non-empty feature/target lists");
            }
            ofl::SampleBuffer buf(std::max<int>(16, static_cast<int>(features.size())));
            for (std::size_t i = 0; i < features.size(); ++i) {
                buf.add_seed(to_tensor(features[i]), to_tensor(targets[i]));
            }
            const int C = buf.samples().front().features.extent(0);
            const int D = buf.samples().front().target.extent(0);
            ofl::FitResult res = ofl::fit(buf, iters, ofl::zero_mapping(C, D, k, lam));
            return py::make_tuple(from_tensor(res.weights.tau), res.trace);
        },
        py::arg("features"), py::arg("targets"), py::arg("lam") = 0.05, py::arg("k") = 3,
        py::arg("iters") = 10,
        "Steepest-descent ridge fit of the mapping network; returns (tau, loss_trace)");
    m.def(
        "apply_mapping",
        [](const FloatArray& tau, const FloatArray& fq) {
            ofl::MappingWeights mw{to_tensor(tau), 1.0};
            return from_tensor(ofl::apply_mapping(mw, to_tensor(fq)));
        },
        py::arg("tau"), py::arg("fq"));

    // tensor file format
    m.def(
        "write_tensor",
        [](const FloatArray& t, const std::filesystem::path& path) {
            ofl::write_tensor(to_tensor(t), path);
        },
        py::arg("tensor"), py::arg("path"));
    m.def(
        "read_tensor",
        [](const std::filesystem::path& path) { return from_tensor(ofl::read_tensor(path)); },
        py::arg("path"));

    // dataset + end-to-end entry points
    m.def(
        "gen_synthetic",
        [](const std::filesystem::path& out_dir, const py::kwargs& kw) {
            ofl::GenParams gp;
            for (const auto& item : kw) {
                const std::string key = py::str(item.first);
                if (key == "seed") gp.seed = item.second.cast<std::uint64_t>();
                else if (key == "sequences") gp.n_sequences = item.second.cast<int>();
                else if (key == "train_sequences") gp.train_sequences = item.second.cast<int>();
                else if (key == "frames") gp.frames_per_sequence = item.second.cast<int>();
                else if (key == "size") gp.size = item.second.cast<int>();
                else if (key == "distractors") gp.n_distractors = item.second.cast<int>();
                else if (key == "radius_min") gp.radius_min = item.second.cast<double>();
                else if (key == "radius_max") gp.radius_max = item.second.cast<double>();
                else if (key == "distractor_gap") gp.distractor_gap = item.second.cast<double>();
                else if (key == "blur_sigma") gp.blur_sigma = item.second.cast<double>();
                else if (key == "drift") gp.drift = item.second.cast<double>();
                else if (key == "noise_sigma") gp.noise_sigma = item.second.cast<double>();
                else throw ofl::ConfigError("gen_synthetic: unknown parameter '" + key + "'");
            }
            const ofl::SequenceDataset ds = ofl::gen_synthetic(gp, out_dir);
            return ds.manifest_path;
        },
        py::arg("out_dir"), "Generate the synthetic distractor benchmark; returns the manifest path");
    m.def(
        "train",
        [](const std::filesystem::path& data, const std::filesystem::path& model_out,
           const py::dict& config) {
            const ofl::SequenceDataset ds = ofl::load_dataset(
                std::filesystem::is_directory(data) ? data / "manifest.json" : data);
            ofl::RunConfig run = config_from_dict(config);
            run.pipe.validate();
            const ofl::StackParams stack = ofl::init_stack(run.pipe.seed, run.pipe.C, run.pipe.D);
            const ofl::AttentionParams attn =
                ofl::init_attention(run.pipe.seed, run.pipe.C, run.pipe.D, run.pipe.heads);
            ofl::LearnerSetup learner{run.pipe.k_map,      run.pipe.lambda,
                                      run.pipe.train_iters, run.pipe.k_refs,
                                      run.pipe.cap_rolling, run.pipe.cap_buffer};
            auto [fusion, report] =
                ofl::train_offline(stack, attn, learner, ofl::build_train_set(ds), run.train);
            ofl::save_model(model_out, stack, attn, fusion, run.to_json());
            ofl::save_train_report(report, model_out / "train_report.json",
                                   model_out / "loss_trace.csv");
            py::dict out;
            out["epochs"] = report.epoch_loss.size();
            out["epoch_loss"] = report.epoch_loss;
            out["epoch_lr"] = report.epoch_lr;
            return out;
        },
        py::arg("data"), py::arg("model_out"), py::arg("config") = py::dict(),
        "Train the fusion parameters offline and write the model directory");
    m.def(
        "evaluate",
        [](const std::filesystem::path& data, const std::filesystem::path& model,
           const std::filesystem::path& report_path, const std::string& ablate,
           py::object gamma, py::object k_refs, int threads) {
            const ofl::SequenceDataset ds = ofl::load_dataset(
                std::filesystem::is_directory(data) ? data / "manifest.json" : data);
            ofl::Model mdl = ofl::load_model(model);
            ofl::RunConfig run = ofl::RunConfig::from_json(mdl.config);
            if (ablate == "base") {
                run.pipe.use_learner = false;
                run.pipe.use_afm = false;
            } else if (ablate == "learner") {
                run.pipe.use_afm = false;
            } else if (ablate != "full") {
                throw ofl::ConfigError("evaluate: unknown ablation '" + ablate + "'");
            }
            if (!gamma.is_none()) run.pipe.gamma = gamma.cast<double>();
            if (!k_refs.is_none()) run.pipe.k_refs = k_refs.cast<int>();
            nlohmann::json echo = run.to_json();
            echo["ablate"] = ablate;
            ofl::Components comps{&mdl.stack, &mdl.attn, &mdl.fusion};
            ofl::RunOptions opts;
            opts.threads = threads;
            const ofl::ExperimentReport rep = ofl::run_experiment(run.pipe, comps, ds, echo, opts);
            ofl::write_report(rep, report_path);
            return json_to_py(ofl::report_to_json(rep));
        },
        py::arg("data"), py::arg("model"), py::arg("report"), py::arg("ablate") = "full",
        py::arg("gamma") = py::none(), py::arg("k_refs") = py::none(), py::arg("threads") = 0,
        "Run the pipeline over the test split; returns the report as a dict");
    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) { return ofl::run_cli(args); },
        py::arg("args"), "Invoke the command-line interface in-process; returns the exit code");
}
