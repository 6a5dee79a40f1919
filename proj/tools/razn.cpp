// razn: generate synthetic pyramids, train, evaluate and benchmark zoom networks.
//
// Exit status: 0 ok, 2 configuration error, 3 refused to overwrite,
// 4 numeric failure, 5 checkpoint/config/dataset mismatch.

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "json.hpp"
#include "razn/checkpoint.hpp"
#include "razn/config_file.hpp"
#include "razn/inference.hpp"
#include "razn/metrics.hpp"
#include "razn/runner.hpp"
#include "razn/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace razn;

namespace {

struct OverwriteRefused : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum Exit { kOk = 0, kConfig = 2, kOverwrite = 3, kNumeric = 4, kMismatch = 5 };

void write_json(const fs::path& p, const json& j) {
    std::ofstream out(p, std::ios::trunc);
    out << j.dump(2) << '\n';
}

/// Creates `dir` for fresh output; refuses if it already holds files unless forced.
void prepare_out(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw OverwriteRefused(dir.string() + " is not empty (pass --force to overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

std::string default_data_root() {
    const char* env = std::getenv("RAZN_DATA_ROOT");
    return env ? env : "data/desk";
}

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> workers;
    bool force = false;
};

// ---------------------------------------------------------------------------

struct GenerateArgs {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
    int workers = 1;
    bool force = false;
};

int cmd_generate(const GenerateArgs& a) {
    SynthSpec spec = a.spec.empty() ? SynthSpec{} : load_synth_spec(a.spec);
    if (a.seed) spec.seed = *a.seed;
    spec.validate();
    const fs::path out = a.out.empty() ? fs::path(default_data_root()) : fs::path(a.out);
    prepare_out(out, a.force);
    const auto t0 = std::chrono::steady_clock::now();
    const PyramidDataset ds = generate(spec, out, a.workers);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    PyramidDataset::open(out);
    std::cout << "generated " << ds.levels() << " levels in " << out.string() << " (" << secs << " s)\n";
    for (const auto& s : confusability_report(ds)) {
        std::cout << "level " << s.level << " class-2/3 separability ";
        if (s.score) {
            std::cout << *s.score << '\n';
        } else {
            std::cout << "n/a (" << s.notice << ")\n";
        }
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonFlags common;
    std::optional<std::int64_t> steps;
    std::string baseline;
    std::string reward_sign;
    std::string data;
    std::string resume;
};

RunConfig resolve(const CommonFlags& c, RunConfig base = {}) {
    RunConfig cfg = c.config.empty() ? base : load_run_config(c.config, base);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out = c.out;
    if (c.workers) cfg.workers = *c.workers;
    if (cfg.data_root.empty()) cfg.data_root = default_data_root();
    return cfg;
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg;
    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) {
        resume = read_checkpoint(a.resume);
        cfg = resolve(a.common, config_of(*resume));
    } else {
        cfg = resolve(a.common);
    }
    if (a.steps) cfg.steps = *a.steps;
    if (!a.baseline.empty()) cfg.method = parse_method(a.baseline);
    if (!a.reward_sign.empty()) cfg.zoom.sign = parse_reward_sign(a.reward_sign);
    if (!a.data.empty()) cfg.data_root = a.data;
    if (cfg.out.empty()) throw ConfigError("no output directory (set 'out' in the config or pass --out)");
    cfg.validate();

    const fs::path out(cfg.out);
    if (resume) {
        if (kind_of(*resume) != cfg.method) throw ArtifactMismatchError("resume checkpoint was trained with another method");
        fs::create_directories(out);
    } else {
        prepare_out(out, a.common.force);
    }
    write_json(out / "config.json", cfg);

    PyramidDataset ds = PyramidDataset::open(cfg.data_root);
    check_dataset(ds, cfg);
    ds.preload(levels_needed(ds, cfg));
    const PatchSampler sampler(ds, cfg.seg.input_h, cfg.seg.input_w, cfg.split, cfg.sampling);

    std::ofstream log(out / "train_log.jsonl", resume ? std::ios::app : std::ios::trunc);
    fs::create_directories(out / "checkpoints");
    TrainHooks hooks;
    hooks.log = [&](const json& rec) {
        log << rec.dump() << '\n';
        log.flush();
        std::cout << rec.dump() << '\n';
    };
    hooks.checkpoint = [&](const Checkpoint& ck) {
        write_checkpoint(out / "checkpoints" / ("step_" + std::to_string(ck.step) + ".ckpt"), ck);
        write_checkpoint(out / "checkpoint.ckpt", ck);
    };

    auto guard = [&](auto& st, auto&& loop) {
        try {
            loop();
        } catch (const NumericError&) {
            write_checkpoint(out / "partial.ckpt", to_checkpoint(st));
            throw;
        }
    };
    if (cfg.method == Method::Razn) {
        RaznState st = resume ? razn_from_checkpoint(*resume, cfg) : make_razn_state(cfg);
        guard(st, [&] { train_razn(st, ds, sampler, cfg.steps, hooks); });
        write_checkpoint(out / "checkpoint.ckpt", to_checkpoint(st));
    } else {
        BaselineState st = resume ? baseline_from_checkpoint(*resume, cfg) : make_baseline_state(cfg);
        guard(st, [&] { train_baseline(st, ds, sampler, cfg.steps, hooks); });
        write_checkpoint(out / "checkpoint.ckpt", to_checkpoint(st));
    }
    std::cout << "wrote " << (out / "checkpoint.ckpt").string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonFlags common;
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    int n_patches = 0;
    std::string force_action;
    bool save_masks = false;
};

/// Loads the checkpoint and checks it against an explicitly given config.
LoadedModel open_model(const EvalArgs& a, RunConfig& cfg) {
    const Checkpoint ck = read_checkpoint(a.checkpoint);
    LoadedModel m = load_model(ck);
    cfg = m.cfg;
    if (!a.common.config.empty()) {
        const RunConfig given = load_run_config(a.common.config);
        if (!(given.seg == m.cfg.seg) || !(given.policy == m.cfg.policy) || given.method != m.cfg.method ||
            given.zoom.rate != m.cfg.zoom.rate) {
            throw ArtifactMismatchError("checkpoint " + a.checkpoint + " does not match config " + a.common.config);
        }
        cfg.zoom.max_zoom = given.zoom.max_zoom;
        if (m.razn) m.razn->cfg.zoom.max_zoom = given.zoom.max_zoom;
    }
    if (!a.data.empty()) cfg.data_root = a.data;
    if (a.common.workers) cfg.workers = *a.common.workers;
    return m;
}

PyramidDataset open_data(const RunConfig& cfg) {
    PyramidDataset ds = PyramidDataset::open(cfg.data_root);
    try {
        check_dataset(ds, cfg);
    } catch (const ConfigError& e) {
        throw ArtifactMismatchError(std::string("dataset does not fit the checkpoint: ") + e.what());
    }
    ds.preload(levels_needed(ds, cfg));
    return ds;
}

ActionMode action_mode(const std::string& s) {
    if (s.empty() || s == "greedy") return ActionMode::Greedy;
    if (s == "sample") return ActionMode::Sample;
    if (s == "break") return ActionMode::ForceBreak;
    if (s == "zoom") return ActionMode::ForceZoom;
    throw ConfigError("--action must be greedy, sample, break or zoom");
}

fs::path report_dir(const EvalArgs& a) {
    const fs::path dir = a.common.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.common.out);
    fs::create_directories(dir.empty() ? fs::path(".") : dir);
    return dir.empty() ? fs::path(".") : dir;
}

void write_trace(const fs::path& p, const ActionTrace& trace, const CostLedger& ledger, const std::vector<PatchSummary>& patches,
                 double ratio) {
    std::ofstream out(p, std::ios::trunc);
    std::size_t e = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        json rec{{"patch", i},
                 {"ref", {patches[i].ref.level, patches[i].ref.row, patches[i].ref.col, patches[i].ref.height, patches[i].ref.width}},
                 {"seg_units", ledger.patches[i].seg_units},
                 {"policy_units", ledger.patches[i].policy_units},
                 {"relative_cost", ledger.patches[i].relative(ratio)}};
        json steps = json::array();
        // Entries of one patch start at its root reference.
        while (e < trace.entries.size()) {
            steps.push_back(to_json(trace.entries[e]));
            ++e;
            if (e < trace.entries.size() && trace.entries[e].depth == 0) break;
        }
        rec["actions"] = steps;
        out << rec.dump() << '\n';
    }
}

int cmd_eval(const EvalArgs& a) {
    RunConfig cfg;
    LoadedModel m = open_model(a, cfg);
    const PyramidDataset ds = open_data(cfg);
    const PatchSampler sampler(ds, cfg.seg.input_h, cfg.seg.input_w, cfg.split, cfg.sampling);
    std::vector<PatchRef> refs;
    if (a.split == "test") {
        refs = sampler.test_patches();
    } else if (a.split == "train") {
        refs = sampler.train_patches();
    } else {
        throw ConfigError("--split must be train or test");
    }
    const auto t0 = std::chrono::steady_clock::now();
    const EvalOutcome ev = evaluate(ds, refs, m.predictor(ds, action_mode(a.force_action)), cfg.workers, a.save_masks);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double ratio = m.policy_ratio();
    const EvalReport rep = make_report(to_string(cfg.method), ev.confusion, relative_time(ev.ledger, ratio));
    std::cout << format_table({rep});
    json j = to_json(rep);
    j["split"] = a.split;
    j["policy_ratio"] = ratio;
    j["wall_seconds"] = wall;
    const PolicyContrast pc = policy_contrast(ev.patches);
    if (pc.carcinoma) j["p_tilde_carcinoma"] = *pc.carcinoma;
    if (pc.normal) j["p_tilde_normal"] = *pc.normal;
    const fs::path dir = report_dir(a);
    write_json(dir / ("eval_" + a.split + ".json"), j);
    write_trace(dir / ("trace_" + a.split + ".jsonl"), ev.trace, ev.ledger, ev.patches, ratio);
    if (a.save_masks) {
        fs::create_directories(dir / ("masks_" + a.split));
        for (std::size_t i = 0; i < refs.size(); ++i) {
            write_png_mask(dir / ("masks_" + a.split) /
                               ("mask_" + std::to_string(refs[i].row) + "_" + std::to_string(refs[i].col) + ".png"),
                           ev.masks[i]);
        }
    }
    return kOk;
}

int cmd_bench(const EvalArgs& a) {
    RunConfig cfg;
    LoadedModel m = open_model(a, cfg);
    const PyramidDataset ds = open_data(cfg);
    const PatchSampler sampler(ds, cfg.seg.input_h, cfg.seg.input_w, cfg.split, cfg.sampling);
    const int n = a.n_patches > 0 ? a.n_patches : cfg.n_patches;
    const auto refs = bench_selection(sampler.bench_patches(), n, cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const EvalOutcome ev = evaluate(ds, refs, m.predictor(ds, action_mode(a.force_action)), cfg.workers);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const double ratio = m.policy_ratio();
    const TimeSummary t = relative_time(ev.ledger, ratio);
    std::cout << "relative time over " << t.patches << " patches: " << t.mean << " +- " << t.std << " (policy ratio " << ratio
              << ")\n";
    const fs::path dir = report_dir(a);
    write_json(dir / "bench.json", {{"method", to_string(cfg.method)},
                                    {"patches", t.patches},
                                    {"relative_time_mean", t.mean},
                                    {"relative_time_std", t.std},
                                    {"policy_ratio", ratio},
                                    {"wall_seconds", wall},
                                    {"wall_seconds_per_patch", wall / static_cast<double>(n)}});
    write_trace(dir / "bench_trace.jsonl", ev.trace, ev.ledger, ev.patches, ratio);
    return kOk;
}

void add_common(CLI::App* sub, CommonFlags& c) {
    sub->add_option("--config", c.config, "YAML run configuration");
    sub->add_option("--seed", c.seed, "override the configured seed");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--workers", c.workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    sub->add_flag("--force", c.force, "overwrite a non-empty output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zoom-network training and evaluation on tiled image pyramids"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "write a synthetic pyramid");
    g->add_option("--spec", gen.spec, "YAML synthetic spec (defaults apply when omitted)");
    g->add_option("--out", gen.out, "output directory (default $RAZN_DATA_ROOT)");
    g->add_option("--seed", gen.seed, "override the spec seed");
    g->add_option("--workers", gen.workers, "worker threads")->check(CLI::PositiveNumber);
    g->add_flag("--force", gen.force, "overwrite an existing dataset");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a zoom network or a baseline");
    add_common(t, tr.common);
    t->add_option("--steps", tr.steps, "total training steps");
    t->add_option("--baseline", tr.baseline, "method: scale1, scale2, ms or razn")
        ->check(CLI::IsMember({"scale1", "scale2", "ms", "razn"}));
    t->add_option("--reward-sign", tr.reward_sign, "as-written or loss-decrease")
        ->check(CLI::IsMember({"as-written", "loss-decrease"}));
    t->add_option("--data", tr.data, "dataset root");
    t->add_option("--resume", tr.resume, "continue from this checkpoint");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score a checkpoint on a split");
    add_common(e, ev.common);
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    e->add_option("--data", ev.data, "dataset root");
    e->add_option("--split", ev.split, "train or test");
    e->add_option("--action", ev.force_action, "greedy, sample, break or zoom");
    e->add_flag("--save-masks", ev.save_masks, "write finest-level prediction masks");

    EvalArgs be;
    auto* b = app.add_subcommand("bench", "relative inference time over held-out patches");
    add_common(b, be.common);
    b->add_option("--checkpoint", be.checkpoint, "checkpoint file")->required();
    b->add_option("--data", be.data, "dataset root");
    b->add_option("--n-patches", be.n_patches, "patches to time (default from config, 100)")->check(CLI::PositiveNumber);
    b->add_option("--action", be.force_action, "greedy, sample, break or zoom");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kConfig;
    }

    try {
        if (*g) return cmd_generate(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*b) return cmd_bench(be);
    } catch (const OverwriteRefused& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kOverwrite;
    } catch (const ArtifactMismatchError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kMismatch;
    } catch (const NumericError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kNumeric;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kConfig;
    } catch (const ValidationError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kConfig;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return kOk;
}
