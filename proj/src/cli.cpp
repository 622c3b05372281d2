#include "ofl/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"
#include "ofl/eval_data.hpp"

namespace ofl {

namespace {

const std::set<std::string> kConfigKeys = {
    "seed", "C", "D", "k_map", "lambda", "heads", "gamma", "k_refs", "train_iters",
    "infer_iters", "binarize_threshold", "cap_rolling", "cap_buffer", "use_learner",
    "use_afm", "use_update", "reseed_per_frame", "epochs", "lr0", "lr_decay_epochs",
    "lr_decay_factor", "adamw_beta1", "adamw_beta2", "adamw_eps", "adamw_weight_decay"};

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (kConfigKeys.find(key) == kConfigKeys.end()) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    RunConfig c;
    auto get = [&j](const char* key, auto& dst) {
        if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
    };
    get("seed", c.pipe.seed);
    get("C", c.pipe.C);
    get("D", c.pipe.D);
    get("k_map", c.pipe.k_map);
    get("lambda", c.pipe.lambda);
    get("heads", c.pipe.heads);
    get("gamma", c.pipe.gamma);
    get("k_refs", c.pipe.k_refs);
    get("train_iters", c.pipe.train_iters);
    get("infer_iters", c.pipe.infer_iters);
    get("binarize_threshold", c.pipe.binarize_threshold);
    get("cap_rolling", c.pipe.cap_rolling);
    get("cap_buffer", c.pipe.cap_buffer);
    get("use_learner", c.pipe.use_learner);
    get("use_afm", c.pipe.use_afm);
    get("use_update", c.pipe.use_update);
    get("reseed_per_frame", c.pipe.reseed_per_frame);
    get("epochs", c.train.epochs);
    get("lr0", c.train.lr0);
    get("lr_decay_epochs", c.train.decay_epochs);
    get("lr_decay_factor", c.train.decay_factor);
    get("adamw_beta1", c.train.beta1);
    get("adamw_beta2", c.train.beta2);
    get("adamw_eps", c.train.eps);
    get("adamw_weight_decay", c.train.weight_decay);
    c.train.seed = c.pipe.seed;
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(static_cast<std::size_t>(e.byte), "bad config JSON in " + path.string());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    return {{"seed", pipe.seed},
            {"C", pipe.C},
            {"D", pipe.D},
            {"k_map", pipe.k_map},
            {"lambda", pipe.lambda},
            {"heads", pipe.heads},
            {"gamma", pipe.gamma},
            {"k_refs", pipe.k_refs},
            {"train_iters", pipe.train_iters},
            {"infer_iters", pipe.infer_iters},
            {"binarize_threshold", pipe.binarize_threshold},
            {"cap_rolling", pipe.cap_rolling},
            {"cap_buffer", pipe.cap_buffer},
            {"use_learner", pipe.use_learner},
            {"use_afm", pipe.use_afm},
            {"use_update", pipe.use_update},
            {"reseed_per_frame", pipe.reseed_per_frame},
            {"epochs", train.epochs},
            {"lr0", train.lr0},
            {"lr_decay_epochs", train.decay_epochs},
            {"lr_decay_factor", train.decay_factor},
            {"adamw_beta1", train.beta1},
            {"adamw_beta2", train.beta2},
            {"adamw_eps", train.eps},
            {"adamw_weight_decay", train.weight_decay}};
}

namespace {

std::filesystem::path resolve_manifest(const std::filesystem::path& data) {
    if (std::filesystem::is_directory(data)) return data / "manifest.json";
    return data;
}

struct EvalFlags {
    std::string data;
    std::string model;
    std::string report;
    std::string config_file;
    std::string ablate = "full";
    std::string dump_masks;
    std::optional<double> gamma;
    std::optional<int> k_refs;
    std::optional<std::uint64_t> seed;
    int threads = 0;
};

void apply_ablation(PipelineConfig& cfg, const std::string& ablate) {
    if (ablate == "base") {
        cfg.use_learner = false;
        cfg.use_afm = false;
    } else if (ablate == "learner") {
        cfg.use_learner = true;
        cfg.use_afm = false;
    } else if (ablate == "full") {
        cfg.use_learner = true;
        cfg.use_afm = true;
    } else {
        throw ConfigError("unknown ablation '" + ablate + "' (expected base|learner|full)");
    }
}

ExperimentReport eval_once(const EvalFlags& flags, const std::filesystem::path& report_path) {
    const SequenceDataset ds = load_dataset(resolve_manifest(flags.data));

    RunConfig run;
    StackParams stack;
    AttentionParams attn;
    FusionParams fusion;
    if (!flags.model.empty()) {
        Model model = load_model(flags.model);
        run = RunConfig::from_json(model.config);
        stack = std::move(model.stack);
        attn = std::move(model.attn);
        fusion = std::move(model.fusion);
    } else {
        if (flags.ablate != "base") {
            throw IoError("eval: --model is required unless --ablate base");
        }
        run = flags.config_file.empty() ? RunConfig::defaults()
                                        : RunConfig::from_file(flags.config_file);
        if (flags.seed) run.pipe.seed = *flags.seed;
        stack = init_stack(run.pipe.seed, run.pipe.C, run.pipe.D);
        attn = init_attention(run.pipe.seed, run.pipe.C, run.pipe.D, run.pipe.heads);
        fusion = init_fusion(run.pipe.seed, run.pipe.C, run.pipe.D);
    }
    apply_ablation(run.pipe, flags.ablate);
    if (flags.gamma) run.pipe.gamma = *flags.gamma;
    if (flags.k_refs) run.pipe.k_refs = *flags.k_refs;

    nlohmann::json echo = run.to_json();
    echo["ablate"] = flags.ablate;

    RunOptions opts;
    opts.threads = flags.threads;
    if (!flags.dump_masks.empty()) opts.dump_masks = flags.dump_masks;

    Components comps{&stack, &attn, &fusion};
    ExperimentReport rep = run_experiment(run.pipe, comps, ds, echo, opts);
    write_report(rep, report_path);
    return rep;
}

int cmd_gen_data(const GenParams& gp, const std::filesystem::path& out) {
    const SequenceDataset ds = gen_synthetic(gp, out);
    std::cout << ds.manifest_path.string() << "\n";
    return 0;
}

int cmd_train(const std::string& data, const std::string& config_file,
              const std::string& model_out, const std::optional<std::uint64_t>& seed,
              const std::optional<int>& epochs, const std::optional<double>& lr0) {
    const SequenceDataset ds = load_dataset(resolve_manifest(data));
    RunConfig run = config_file.empty() ? RunConfig::defaults() : RunConfig::from_file(config_file);
    if (seed) {
        run.pipe.seed = *seed;
        run.train.seed = *seed;
    }
    if (epochs) run.train.epochs = *epochs;
    if (lr0) run.train.lr0 = *lr0;
    run.pipe.validate();

    const StackParams stack = init_stack(run.pipe.seed, run.pipe.C, run.pipe.D);
    const AttentionParams attn = init_attention(run.pipe.seed, run.pipe.C, run.pipe.D, run.pipe.heads);
    const TrainSet train_set = build_train_set(ds);
    LearnerSetup learner;
    learner.k_map = run.pipe.k_map;
    learner.lambda = run.pipe.lambda;
    learner.train_iters = run.pipe.train_iters;
    learner.k_refs = run.pipe.k_refs;
    learner.cap_rolling = run.pipe.cap_rolling;
    learner.cap_buffer = run.pipe.cap_buffer;

    auto [fusion, report] = train_offline(stack, attn, learner, train_set, run.train);

    const std::filesystem::path out(model_out);
    save_model(out, stack, attn, fusion, run.to_json());
    save_train_report(report, out / "train_report.json", out / "loss_trace.csv");
    std::cout << "trained " << report.epoch_loss.size() << " epochs; final mean loss "
              << report.epoch_loss.back() << "; model written to " << out.string() << "\n";
    return 0;
}

int cmd_eval(const EvalFlags& flags) {
    const ExperimentReport rep = eval_once(flags, flags.report);
    std::cout << "overall mean dice " << rep.overall_dice << ", mean ahd " << rep.overall_ahd
              << " -> " << flags.report << "\n";
    return 0;
}

int cmd_ablate(const EvalFlags& base_flags, const std::string& out_dir) {
    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);
    nlohmann::json summary;
    double base_dice = 0.0, learner_dice = 0.0, full_dice = 0.0;
    for (const std::string ab : {"base", "learner", "full"}) {
        EvalFlags flags = base_flags;
        flags.ablate = ab;
        const ExperimentReport rep = eval_once(flags, out / (ab + ".json"));
        summary["reports"][ab] = {{"path", (out / (ab + ".json")).string()},
                                  {"mean_dice", rep.overall_dice},
                                  {"mean_ahd", rep.overall_ahd}};
        if (ab == "base") base_dice = rep.overall_dice;
        if (ab == "learner") learner_dice = rep.overall_dice;
        if (ab == "full") full_dice = rep.overall_dice;
        std::cout << ab << ": mean dice " << rep.overall_dice << ", mean ahd " << rep.overall_ahd
                  << "\n";
    }
    summary["gaps"] = {{"learner_minus_base", learner_dice - base_dice},
                       {"full_minus_learner", full_dice - learner_dice},
                       {"full_minus_base", full_dice - base_dice}};
    std::ofstream f(out / "ablation_summary.json");
    if (!f) throw IoError("cannot write " + (out / "ablation_summary.json").string());
    f << summary.dump(2) << "\n";
    std::cout << "full - base dice gap: " << (full_dice - base_dice) << "\n";
    return 0;
}

int cmd_render(const std::string& data, const std::string& pred, const std::string& out_dir) {
    const SequenceDataset ds = load_dataset(resolve_manifest(data));
    const std::filesystem::path pred_root(pred);
    const std::filesystem::path out(out_dir);
    if (!std::filesystem::is_directory(pred_root)) {
        throw IoError("prediction directory not found: " + pred_root.string());
    }
    std::size_t rendered = 0;
    for (const SequenceRecord& seq : ds.sequences) {
        const auto seq_dir = pred_root / seq.id;
        if (!std::filesystem::is_directory(seq_dir)) continue;
        for (const std::string& cls : ds.classes) {
            const auto cls_dir = seq_dir / cls;
            if (!std::filesystem::is_directory(cls_dir)) continue;
            for (std::size_t i = 0; i < seq.frames.size(); ++i) {
                std::ostringstream name;
                name << "frame_" << (i < 10 ? "0" : "") << i << ".pgm";
                const auto mask_path = cls_dir / name.str();
                if (!std::filesystem::exists(mask_path)) {
                    throw IoError("missing prediction: " + mask_path.string());
                }
                const Tensor image = load_image(seq.frames[i], ds.H, ds.W);
                const Tensor mask = load_mask(mask_path, ds.H, ds.W);
                const auto dst_dir = out / seq.id / cls;
                std::filesystem::create_directories(dst_dir);
                render_overlay(image, mask, dst_dir / name.str());
                ++rendered;
            }
        }
    }
    if (rendered == 0) throw IoError("no predictions found under " + pred_root.string());
    std::cout << "rendered " << rendered << " overlays to " << out.string() << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"prompt-free online few-shot segmentation pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic distractor benchmark");
    GenParams gp;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gp.seed, "dataset seed");
    gen->add_option("--sequences", gp.n_sequences, "total sequences");
    gen->add_option("--train-sequences", gp.train_sequences, "sequences tagged train");
    gen->add_option("--frames", gp.frames_per_sequence, "frames per sequence");
    gen->add_option("--distractors", gp.n_distractors, "distractor ellipses per sequence");
    gen->add_option("--size", gp.size, "image side length (multiple of 4)");
    gen->add_option("--radius-min", gp.radius_min, "min target semi-axis");
    gen->add_option("--radius-max", gp.radius_max, "max target semi-axis");
    gen->add_option("--distractor-gap", gp.distractor_gap, "intensity gap to the target");
    gen->add_option("--blur-sigma", gp.blur_sigma, "boundary blur sigma");
    gen->add_option("--drift", gp.drift, "per-frame drift magnitude");
    gen->add_option("--noise-sigma", gp.noise_sigma, "additive noise sigma");

    // train
    auto* train = app.add_subcommand("train", "fit the fusion parameters offline");
    std::string train_data, train_config, train_model_out;
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs;
    std::optional<double> train_lr0;
    train->add_option("--data", train_data, "dataset directory or manifest")->required();
    train->add_option("--model-out", train_model_out, "model output directory")->required();
    train->add_option("--config", train_config, "config file (JSON)");
    train->add_option("--seed", train_seed, "override config seed");
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--lr0", train_lr0, "override initial learning rate");

    // eval
    auto* eval = app.add_subcommand("eval", "run the pipeline over the test split");
    EvalFlags ef;
    eval->add_option("--data", ef.data, "dataset directory or manifest")->required();
    eval->add_option("--report", ef.report, "report JSON output path")->required();
    eval->add_option("--model", ef.model, "trained model directory");
    eval->add_option("--config", ef.config_file, "config file (base ablation only)");
    eval->add_option("--ablate", ef.ablate, "base|learner|full")
        ->check(CLI::IsMember({"base", "learner", "full"}));
    eval->add_option("--gamma", ef.gamma, "confidence gate threshold");
    eval->add_option("--k-refs", ef.k_refs, "reference count for the memory bank");
    eval->add_option("--seed", ef.seed, "seed (base ablation without a model)");
    eval->add_option("--dump-masks", ef.dump_masks, "directory for predicted masks");
    eval->add_option("--threads", ef.threads, "worker threads (0 = auto)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "run base/learner/full and summarize the gaps");
    EvalFlags af;
    std::string ablate_out;
    ablate->add_option("--data", af.data, "dataset directory or manifest")->required();
    ablate->add_option("--model", af.model, "trained model directory")->required();
    ablate->add_option("--out", ablate_out, "output directory for the three reports")->required();
    ablate->add_option("--gamma", af.gamma, "confidence gate threshold");
    ablate->add_option("--k-refs", af.k_refs, "reference count for the memory bank");
    ablate->add_option("--threads", af.threads, "worker threads (0 = auto)");

    // render
    auto* render = app.add_subcommand("render", "overlay predicted masks on the input frames");
    std::string render_data, render_pred, render_out;
    render->add_option("--data", render_data, "dataset directory or manifest")->required();
    render->add_option("--pred", render_pred, "directory of predicted masks")->required();
    render->add_option("--out", render_out, "overlay output directory")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gp, gen_out);
        if (train->parsed()) {
            return cmd_train(train_data, train_config, train_model_out, train_seed, train_epochs,
                             train_lr0);
        }
        if (eval->parsed()) return cmd_eval(ef);
        if (ablate->parsed()) return cmd_ablate(af, ablate_out);
        if (render->parsed()) return cmd_render(render_data, render_pred, render_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace ofl
