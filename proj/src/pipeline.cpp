#include "ofl/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ofl/checksum.hpp"
#include "ofl/errors.hpp"

namespace ofl {

const char* kVersionString = "oflseg 0.1.0";

void PipelineConfig::validate() const {
    if (gamma <= 0.0 || gamma >= 1.0) throw ConfigError("config: gamma must lie in (0,1)");
    if (k_refs < 1) throw ConfigError("config: k_refs must be >= 1");
    if (binarize_threshold <= 0.0 || binarize_threshold >= 1.0) {
        throw ConfigError("config: binarize_threshold must lie in (0,1)");
    }
    if (train_iters < 0 || infer_iters < 0) throw ConfigError("config: iteration counts must be >= 0");
    if (C < 4 || C % 2 != 0) throw ConfigError("config: C must be even and >= 4");
    if (D < 2) throw ConfigError("config: D must be >= 2");
    if (k_map < 1 || k_map % 2 == 0) throw ConfigError("config: k_map must be odd");
    if (cap_rolling < 1 || cap_buffer < 1) throw ConfigError("config: capacities must be >= 1");
    if (lambda <= 0.0) throw ConfigError("config: lambda must be > 0");
    if (heads < 1 || C % heads != 0) throw ConfigError("config: heads must divide C");
    if (use_afm && !use_learner) {
        throw ConfigError("config: the fusion module needs the learner branch enabled");
    }
}

ClassContext build_class_context(const StackParams& stack,
                                 const std::vector<TrainExample>& frames) {
    if (frames.empty()) throw ConfigError("class context: empty training set");
    ClassContext ctx;
    ctx.feats.reserve(frames.size());
    ctx.targets.reserve(frames.size());
    for (const TrainExample& ex : frames) {
        Tensor f = encode_image(stack, ex.image);
        ctx.targets.push_back(encode_memory(stack, f, ex.mask));
        ctx.feats.push_back(std::move(f));
    }
    return ctx;
}

TrainSet build_train_set(const SequenceDataset& ds) {
    const auto train_seqs = ds.split("train");
    if (train_seqs.empty()) throw ConfigError("dataset has no train split");
    TrainSet ts;
    for (const std::string& cls : ds.classes) {
        std::vector<TrainExample> group;
        for (const SequenceRecord* seq : train_seqs) {
            const auto it = seq->masks.find(cls);
            if (it == seq->masks.end()) {
                throw ValidationError("train sequence " + seq->id + " lacks masks for class " + cls);
            }
            for (std::size_t i = 0; i < seq->frames.size(); ++i) {
                group.push_back({load_image(seq->frames[i], ds.H, ds.W),
                                 load_mask(it->second[i], ds.H, ds.W)});
            }
        }
        ts.groups.push_back(std::move(group));
    }
    return ts;
}

// Digest of the adaptive state (bank, mapping weights, sample buffer).
// frame_index is a plain frame counter and deliberately excluded: rejected
// frames must leave this checksum untouched.
std::uint64_t PipelineState::state_checksum() const {
    std::uint64_t h = bank.state_checksum();
    h = checksum(tau.tau, h);
    h = fnv1a64(&tau.lambda, sizeof(tau.lambda), h);
    h ^= buffer.state_checksum() * 0x9E3779B97F4A7C15ULL;
    return h;
}

double confidence_score(const Tensor& prob, double threshold) {
    double num = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < prob.numel(); ++i) {
        if (prob[i] > threshold) {
            num += prob[i];
            ++count;
        }
    }
    if (count == 0) return 0.0;  // empty foreground: forced rejection
    return num / static_cast<double>(count);
}

namespace {

std::vector<MemoryEntry> pick_references(const PipelineConfig& cfg, const ClassContext& ctx,
                                         const Tensor& query_feats) {
    const std::vector<int> refs = select_references(query_feats, ctx.feats, cfg.k_refs);
    std::vector<MemoryEntry> entries;
    entries.reserve(refs.size());
    for (int r : refs) {
        entries.push_back({ctx.targets[static_cast<std::size_t>(r)], 0, true});
    }
    return entries;
}

}  // namespace

PipelineState init_sequence(const PipelineConfig& cfg, const Components& comps,
                            const ClassContext& ctx, const Tensor& first_query_feats) {
    cfg.validate();
    if (ctx.feats.empty()) throw ConfigError("init_sequence: empty training set");
    PipelineState state;
    state.bank = MemoryBank(cfg.cap_rolling);
    state.buffer = SampleBuffer(cfg.cap_buffer);
    for (auto& e : pick_references(cfg, ctx, first_query_feats)) state.bank.insert(std::move(e));
    for (std::size_t i = 0; i < ctx.feats.size(); ++i) {
        state.buffer.add_seed(ctx.feats[i], ctx.targets[i]);
    }
    state.tau = fit(state.buffer, cfg.train_iters,
                    zero_mapping(cfg.C, cfg.D, cfg.k_map, cfg.lambda))
                    .weights;
    state.frame_index = 0;
    state.initialized = true;
    return state;
}

MaskPrediction infer_frame(const PipelineConfig& cfg, PipelineState& state,
                           const Components& comps, const Tensor& image,
                           const ClassContext& ctx) {
    if (!state.initialized) throw StateError("infer_frame: sequence state not initialized");
    const Tensor fq = encode_image(*comps.stack, image);
    if (cfg.reseed_per_frame) state.bank.reset_pinned(pick_references(cfg, ctx, fq));

    const Tensor e1 = attend(*comps.attn, fq, state.bank);
    Tensor e_tar;
    if (cfg.use_learner) {
        const Tensor e2 = convert(*comps.fusion, apply_mapping(state.tau, fq));
        if (cfg.use_afm) {
            e_tar = fuse(*comps.fusion, e1, e2).e_tar;
        } else {
            e_tar = add(scale(e1, 0.5f), scale(e2, 0.5f));
        }
    } else {
        e_tar = e1;
    }

    MaskPrediction pred;
    pred.prob = decode_mask(*comps.stack, e_tar);
    pred.confidence = confidence_score(pred.prob, cfg.binarize_threshold);
    pred.binary = Tensor(pred.prob.dims());
    for (std::size_t i = 0; i < pred.prob.numel(); ++i) {
        pred.binary[i] = pred.prob[i] > cfg.binarize_threshold ? 1.0f : 0.0f;
    }

    const bool do_update = cfg.use_update ? (pred.confidence > cfg.gamma) : true;
    if (do_update) {
        Tensor m = encode_memory(*comps.stack, fq, pred.prob);
        state.bank.insert({m, state.frame_index, false});
        online_refine(state.tau, state.buffer, fq, std::move(m), cfg.infer_iters);
    }
    pred.accepted = do_update;
    state.frame_index += 1;
    return pred;
}

std::vector<MaskPrediction> run_sequence(const PipelineConfig& cfg, const Components& comps,
                                         const ClassContext& ctx,
                                         const std::vector<Tensor>& query_images) {
    if (query_images.empty()) throw ConfigError("run_sequence: need at least one query frame");
    PipelineState state =
        init_sequence(cfg, comps, ctx, encode_image(*comps.stack, query_images.front()));
    std::vector<MaskPrediction> out;
    out.reserve(query_images.size());
    for (const Tensor& img : query_images) {
        out.push_back(infer_frame(cfg, state, comps, img, ctx));
    }
    return out;
}

// --- experiment ---------------------------------------------------------------

namespace {

int resolve_threads(int requested, std::size_t jobs) {
    int t = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    if (t < 1) t = 1;
    if (const char* env = std::getenv("OFL_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) t = std::min(t, cap);
    }
    return std::min<int>(t, static_cast<int>(jobs) > 0 ? static_cast<int>(jobs) : 1);
}

std::string frame_mask_name(std::size_t idx) {
    std::ostringstream os;
    os << "frame_" << (idx < 10 ? "0" : "") << idx << ".pgm";
    return os.str();
}

}  // namespace

ExperimentReport run_experiment(const PipelineConfig& cfg, const Components& comps,
                                const SequenceDataset& ds, const nlohmann::json& config_echo,
                                const RunOptions& opts) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();

    const auto train_seqs = ds.split("train");
    const auto test_seqs = ds.split("test");
    if (train_seqs.empty()) throw ConfigError("run_experiment: dataset has no train split");
    if (test_seqs.empty()) throw ConfigError("run_experiment: dataset has no test split");

    // Per-class training context, shared across sequence runs.
    std::vector<ClassContext> contexts;
    for (const std::string& cls : ds.classes) {
        std::vector<TrainExample> frames;
        for (const SequenceRecord* seq : train_seqs) {
            const auto it = seq->masks.find(cls);
            if (it == seq->masks.end()) {
                throw ValidationError("train sequence " + seq->id + " lacks masks for class " + cls);
            }
            for (std::size_t i = 0; i < seq->frames.size(); ++i) {
                frames.push_back({load_image(seq->frames[i], ds.H, ds.W),
                                  load_mask(it->second[i], ds.H, ds.W)});
            }
        }
        contexts.push_back(build_class_context(*comps.stack, frames));
    }

    struct Job {
        const SequenceRecord* seq;
        std::size_t class_idx;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        for (const SequenceRecord* seq : test_seqs) jobs.push_back({seq, c});
    }

    std::vector<SequenceScore> scores(jobs.size());
    std::atomic<std::size_t> next{0};
    const int n_threads = resolve_threads(opts.threads, jobs.size());
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto run_jobs = [&]() {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= jobs.size()) return;
            const Job& job = jobs[j];
            const std::string& cls = ds.classes[job.class_idx];
            const auto mask_it = job.seq->masks.find(cls);
            if (mask_it == job.seq->masks.end()) {
                throw ValidationError("test sequence " + job.seq->id + " lacks masks for class " + cls);
            }
            std::vector<Tensor> images;
            images.reserve(job.seq->frames.size());
            for (const auto& p : job.seq->frames) images.push_back(load_image(p, ds.H, ds.W));

            const auto preds = run_sequence(cfg, comps, contexts[job.class_idx], images);

            SequenceScore sc;
            sc.sequence = job.seq->id;
            sc.frames = static_cast<int>(preds.size());
            double dsum = 0.0, hsum = 0.0;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                const Tensor gt = load_mask(mask_it->second[i], ds.H, ds.W);
                dsum += dice(preds[i].binary, gt);
                hsum += avg_hausdorff(preds[i].binary, gt);
                if (preds[i].accepted) ++sc.accepted;
            }
            sc.mean_dice = dsum / static_cast<double>(preds.size());
            sc.mean_ahd = hsum / static_cast<double>(preds.size());
            scores[j] = std::move(sc);

            if (!opts.dump_masks.empty()) {
                const auto dir = opts.dump_masks / job.seq->id / cls;
                std::filesystem::create_directories(dir);
                for (std::size_t i = 0; i < preds.size(); ++i) {
                    write_mask_pgm(preds[i].binary, dir / frame_mask_name(i));
                }
            }
        }
    };
    auto worker = [&]() {
        try {
            run_jobs();
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next.store(jobs.size());  // drain remaining work
        }
    };

    if (n_threads <= 1) {
        run_jobs();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
        if (failure) std::rethrow_exception(failure);
    }

    ExperimentReport rep;
    rep.config = config_echo;
    rep.dataset_id = ds.manifest_path.parent_path().filename().string();
    rep.dataset_checksum = checksum_hex(ds.manifest_checksum);
    rep.version = kVersionString;
    double od = 0.0, oh = 0.0;
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        ClassScore cs;
        cs.cls = ds.classes[c];
        double cd = 0.0, ch = 0.0;
        for (std::size_t j = 0; j < jobs.size(); ++j) {
            if (jobs[j].class_idx != c) continue;
            cs.per_sequence.push_back(scores[j]);
            cd += scores[j].mean_dice;
            ch += scores[j].mean_ahd;
        }
        cs.mean_dice = cd / static_cast<double>(cs.per_sequence.size());
        cs.mean_ahd = ch / static_cast<double>(cs.per_sequence.size());
        od += cs.mean_dice;
        oh += cs.mean_ahd;
        rep.per_class.push_back(std::move(cs));
    }
    rep.overall_dice = od / static_cast<double>(ds.classes.size());
    rep.overall_ahd = oh / static_cast<double>(ds.classes.size());
    rep.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// --- report JSON ----------------------------------------------------------------

nlohmann::json report_to_json(const ExperimentReport& r) {
    nlohmann::json j;
    j["config"] = r.config;
    j["dataset_id"] = r.dataset_id;
    j["dataset_checksum"] = r.dataset_checksum;
    j["version"] = r.version;
    auto classes = nlohmann::json::array();
    for (const ClassScore& cs : r.per_class) {
        auto seqs = nlohmann::json::array();
        for (const SequenceScore& s : cs.per_sequence) {
            seqs.push_back({{"sequence", s.sequence},
                            {"mean_dice", s.mean_dice},
                            {"mean_ahd", s.mean_ahd},
                            {"frames", s.frames},
                            {"accepted", s.accepted}});
        }
        classes.push_back({{"class", cs.cls},
                           {"mean_dice", cs.mean_dice},
                           {"mean_ahd", cs.mean_ahd},
                           {"per_sequence", seqs}});
    }
    j["per_class"] = classes;
    j["overall"] = {{"mean_dice", r.overall_dice}, {"mean_ahd", r.overall_ahd}};
    j["runtime_s"] = r.runtime_s;
    return j;
}

ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.config = j.at("config");
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.dataset_checksum = j.at("dataset_checksum").get<std::string>();
    r.version = j.at("version").get<std::string>();
    for (const auto& cj : j.at("per_class")) {
        ClassScore cs;
        cs.cls = cj.at("class").get<std::string>();
        cs.mean_dice = cj.at("mean_dice").get<double>();
        cs.mean_ahd = cj.at("mean_ahd").get<double>();
        for (const auto& sj : cj.at("per_sequence")) {
            cs.per_sequence.push_back({sj.at("sequence").get<std::string>(),
                                       sj.at("mean_dice").get<double>(),
                                       sj.at("mean_ahd").get<double>(),
                                       sj.at("frames").get<int>(), sj.at("accepted").get<int>()});
        }
        r.per_class.push_back(std::move(cs));
    }
    r.overall_dice = j.at("overall").at("mean_dice").get<double>();
    r.overall_ahd = j.at("overall").at("mean_ahd").get<double>();
    r.runtime_s = j.at("runtime_s").get<double>();
    return r;
}

void write_report(const ExperimentReport& r, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path.string());
    f << report_to_json(r).dump(2) << "\n";
}

ExperimentReport read_report(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    return report_from_json(nlohmann::json::parse(f));
}

}  // namespace ofl
