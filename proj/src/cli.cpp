#include "climatellm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <memory>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "climatellm/checkpoint.hpp"
#include "climatellm/dataio.hpp"
#include "climatellm/errors.hpp"
#include "climatellm/metrics.hpp"
#include "climatellm/spectral.hpp"
#include "climatellm/train.hpp"

namespace climatellm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

// ---------------------------------------------------------------------------
// Heatmaps

void write_pgm(const fs::path& path, std::span<const double> plane, std::size_t n_lat,
               std::size_t n_lon, const std::string& hash) {
    if (plane.size() != n_lat * n_lon) throw ShapeError("heatmap size mismatch");
    const auto [lo_it, hi_it] = std::minmax_element(plane.begin(), plane.end());
    const double lo = *lo_it, hi = *hi_it;
    std::string out = "P5\n# config_hash " + hash + "\n" + std::to_string(n_lon) + " " +
                      std::to_string(n_lat) + "\n255\n";
    for (double x : plane) {
        const double t = hi > lo ? (x - lo) / (hi - lo) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    std::ofstream side(path.string() + ".json");
    side << json{{"min", lo}, {"max", hi}, {"width", n_lon}, {"height", n_lat},
                 {"config_hash", hash}}.dump(2)
         << "\n";
    if (!f || !side) throw Error("failed to write heatmap " + path.string());
}

PgmImage read_pgm(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InvalidInput("cannot open " + path.string());
    PgmImage img;
    std::string magic;
    f >> magic;
    if (magic != "P5") throw CorruptData("not a binary PGM file");
    std::vector<std::size_t> header;
    while (header.size() < 3) {
        f >> std::ws;
        if (f.peek() == '#') {
            std::string line;
            std::getline(f, line);
            img.comments.push_back(line.substr(1));
            continue;
        }
        std::size_t x = 0;
        if (!(f >> x)) throw CorruptData("truncated PGM header");
        header.push_back(x);
    }
    f.get();
    img.width = header[0];
    img.height = header[1];
    img.pixels.resize(img.width * img.height);
    f.read(reinterpret_cast<char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw CorruptData("truncated PGM data");
    return img;
}

namespace {

// ---------------------------------------------------------------------------
// Options

class Flags {
public:
    template <typename T>
    CLI::Option* option(CLI::App* app, const std::string& name, const std::string& section,
                        const std::string& key, const std::string& help) {
        auto value = std::make_shared<T>();
        CLI::Option* o = app->add_option(name, *value, help);
        setters_.push_back([o, value, section, key](json& j) {
            if (o->count() > 0) j[section][key] = *value;
        });
        return o;
    }

    void flag(CLI::App* app, const std::string& name, const std::string& section,
              const std::string& key, bool value, const std::string& help) {
        CLI::Option* o = app->add_flag(name, help);
        setters_.push_back([o, section, key, value](json& j) {
            if (o->count() > 0) j[section][key] = value;
        });
    }

    void apply(json& j) const {
        for (const auto& s : setters_) s(j);
    }

private:
    std::vector<std::function<void(json&)>> setters_;
};

void add_model_flags(CLI::App* app, Flags& f) {
    f.option<std::size_t>(app, "--history", "model", "history", "input window length L");
    f.option<std::size_t>(app, "--k-max", "model", "k_max", "retained modes per axis");
    f.option<std::size_t>(app, "--latent", "model", "latent", "latent channels per bin");
    f.option<std::size_t>(app, "--experts", "model", "experts", "number of experts");
    f.option<std::size_t>(app, "--bands", "model", "bands", "radial wavenumber bands");
    f.option<std::size_t>(app, "--prompt-tokens", "model", "prompt_tokens", "prompt tokens K");
    f.option<std::size_t>(app, "--d-model", "model", "d_model", "transformer width");
    f.option<std::size_t>(app, "--layers", "model", "n_layers", "transformer layers");
    f.option<std::size_t>(app, "--heads", "model", "n_heads", "attention heads");
    f.flag(app, "--no-fft", "model", "use_fft", false, "identity in place of the 2D FFT");
    f.flag(app, "--no-prompt", "model", "use_prompt", false, "skip meta-fusion prompts");
    f.flag(app, "--no-moe", "model", "use_moe", false, "single expert, no gating");
}

void add_train_flags(CLI::App* app, Flags& f) {
    f.option<std::size_t>(app, "--epochs", "train", "epochs", "training epochs");
    f.option<std::size_t>(app, "--batch", "train", "batch_size", "batch size");
    f.option<double>(app, "--lr", "train", "learning_rate", "Adam learning rate");
    f.option<double>(app, "--clip", "train", "clip_norm", "global gradient clip norm (0 = off)");
    f.option<std::string>(app, "--loss", "train", "loss_variant",
                          "alpha_weighted or weatherbench_normalized");
    f.flag(app, "--augment", "train", "augment_lon_shift", true,
           "random longitude rotation of training windows");
    f.option<std::uint64_t>(app, "--seed", "train", "seed", "random seed");
}

struct Context {
    std::ostream& out;
    std::ostream& err;
    json file;          // contents of --config
    fs::path root;      // output root
};

json load_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw InvalidInput("cannot open config file " + p.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw InvalidConfig("config file " + p.string() + " is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << j.dump(2) << "\n";
    if (!f) throw Error("failed to write " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    f << s;
    if (!f) throw Error("failed to write " + p.string());
}

std::string utc_stamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path make_run_dir(const fs::path& root, const std::string& command, const std::string& hash) {
    const std::string base = utc_stamp() + "-" + command + "-" + hash.substr(0, 12);
    fs::path dir = root / base;
    for (int k = 2; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
    fs::create_directories(dir);
    return dir;
}

json section(const json& j, const char* name) {
    return j.contains(name) && j.at(name).is_object() ? j.at(name) : json::object();
}

/// defaults < config file < flags, per section.
json layered(const Context& ctx, const Flags& flags, const json& defaults) {
    json cfg = defaults;
    for (const char* s : {"model", "train", "synthetic", "eval"}) {
        if (!cfg.contains(s)) cfg[s] = json::object();
        cfg[s].merge_patch(section(ctx.file, s));
    }
    flags.apply(cfg);
    return cfg;
}

ModelConfig model_for_dataset(const json& cfg, const Dataset& data) {
    json m = cfg.at("model");
    m["n_vars"] = data.manifest.n_vars();
    m["n_lat"] = data.manifest.n_lat();
    m["n_lon"] = data.manifest.n_lon();
    ModelConfig c;
    try {
        c = ModelConfig::from_json(m);
    } catch (const json::exception& e) {
        throw InvalidConfig(std::string("malformed model config: ") + e.what());
    }
    c.validate();
    return c;
}

json dataset_info(const fs::path& manifest, const Dataset& d) {
    return {{"path", fs::absolute(manifest).lexically_normal().string()},
            {"name", d.manifest.name},
            {"checksum", d.manifest.checksum}};
}

std::string fmt(double x, int precision = 6) {
    std::ostringstream os;
    os.precision(precision);
    os << x;
    return os.str();
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(Context& ctx, const json& cfg, const fs::path& dir, bool force) {
    SyntheticConfig sc = SyntheticConfig::from_json(cfg.at("synthetic"));
    sc.validate();
    const fs::path target = dir.empty() ? ctx.root / "data" : dir;
    const fs::path manifest = target / (sc.name + ".manifest.json");
    if (fs::exists(manifest) && !force) {
        ctx.err << "refusing to overwrite " << manifest.string() << " (use --force)\n";
        return kExitValidation;
    }
    const std::string hash = config_hash({{"command", "synth"}, {"synthetic", sc.to_json()}});
    Dataset d = generate_synthetic(sc);
    d.manifest.provenance["config_hash"] = hash;
    const fs::path written = save_dataset(d, target);
    ctx.out << "dataset " << written.string() << "\n"
            << "steps " << d.manifest.n_steps << ", checksum " << load_dataset(written).manifest.checksum
            << ", config_hash " << hash << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

json checkpoint_meta(const TrainState& s, const std::string& hash, const TrainConfig& tc) {
    return {{"epochs_done", s.epochs_done},
            {"best_val", s.best_val},
            {"best_epoch", s.best_epoch},
            {"config_hash", hash},
            {"train", tc.to_json()}};
}

void run_training(Context& ctx, const Dataset& data, const TrainConfig& tc, const std::string& hash,
                  TrainState& state, const fs::path& run) {
    std::ofstream log(run / "train_log.jsonl", std::ios::app);
    train(data, tc, hash, state, [&](const EpochRecord& rec, const TrainState& s) {
        log << rec.to_json().dump() << "\n";
        log.flush();
        save_checkpoint(run / "last.ckpt", s.model, &s.adam, checkpoint_meta(s, hash, tc));
        if (s.best_epoch == rec.epoch) {
            save_checkpoint(run / "best.ckpt", s.best, nullptr, checkpoint_meta(s, hash, tc));
        }
        ctx.out << "epoch " << rec.epoch << " train_loss " << fmt(rec.train_loss) << " val_loss "
                << fmt(rec.val_loss) << " (" << fmt(rec.wall_seconds, 3) << " s)\n";
    });
}

int cmd_train(Context& ctx, const json& layered_cfg, const fs::path& data_path,
              const fs::path& resume) {
    json cfg = layered_cfg;
    fs::path run;
    TrainState state;
    if (!resume.empty()) {
        const json saved = load_json(resume / "config.json");
        // Saved settings win except for the epoch budget, which may be extended.
        json train_cfg = saved.at("train");
        if (cfg.at("train").contains("epochs")) train_cfg["epochs"] = cfg["train"]["epochs"];
        cfg = saved;
        cfg["train"] = train_cfg;
        run = resume;
    }
    const fs::path manifest = resume.empty() ? data_path : fs::path(cfg.at("dataset").at("path"));
    if (manifest.empty()) throw InvalidInput("train needs --data");
    const Dataset data = load_dataset(manifest);
    const ModelConfig mc = model_for_dataset(cfg, data);
    const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
    json effective{{"command", "train"},
                   {"model", mc.to_json()},
                   {"train", tc.to_json()},
                   {"dataset", dataset_info(manifest, data)}};
    const std::string hash = config_hash(effective);
    effective["config_hash"] = hash;

    if (resume.empty()) {
        run = make_run_dir(ctx.root, "train", hash);
        state = initial_train_state(mc, tc);
    } else {
        Checkpoint last = load_checkpoint(run / "last.ckpt");
        if (!last.adam) throw CorruptData("last.ckpt has no optimizer state");
        state.model = std::move(last.model);
        state.adam = std::move(*last.adam);
        state.epochs_done = last.meta.at("epochs_done").get<std::size_t>();
        state.best_val = last.meta.at("best_val").get<double>();
        state.best_epoch = last.meta.at("best_epoch").get<std::size_t>();
        state.best = load_checkpoint(run / "best.ckpt").model;
    }
    write_json(run / "config.json", effective);
    ctx.out << "run " << run.string() << "\nconfig_hash " << hash << "\n";
    run_training(ctx, data, tc, hash, state, run);
    ctx.out << "best epoch " << state.best_epoch << " val_loss " << fmt(state.best_val) << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

EvalOptions eval_options(const json& cfg, const Dataset& data) {
    EvalOptions o;
    const json e = cfg.at("eval");
    o.lead_hours = e.value("lead_hours", std::vector<double>{});
    if (o.lead_hours.empty()) o.lead_hours = {data.manifest.timestep_hours};
    o.max_windows = e.value("max_windows", std::size_t{0});
    return o;
}

void emit_case_maps(const fs::path& dir, const Dataset& data, const Model<float>& model,
                    std::size_t case_offset, std::size_t var, const std::string& hash) {
    const DatasetManifest& m = data.manifest;
    const std::size_t L = model.config.history, start = m.test.begin + case_offset;
    if (start + L >= m.test.end) {
        throw InvalidInput("case " + std::to_string(case_offset) + " lies outside the test split");
    }
    std::vector<std::span<const double>> steps;
    for (std::size_t t = start; t < start + L; ++t) steps.push_back(data.step(t));
    std::vector<double> pred(m.step_size());
    predict_window<float>(steps, model, pred);
    const std::size_t plane = m.n_lat() * m.n_lon();
    auto pick = [&](std::span<const double> x) {
        return std::vector<double>(x.begin() + var * plane, x.begin() + (var + 1) * plane);
    };
    const auto t0 = pick(data.step(start + L - 1)), t1 = pick(data.step(start + L));
    const auto p1 = pick(pred);
    std::vector<double> diff(plane), error(plane);
    for (std::size_t i = 0; i < plane; ++i) {
        diff[i] = t1[i] - t0[i];
        error[i] = p1[i] - t1[i];
    }
    const std::string prefix = "case" + std::to_string(case_offset) + "_" + m.var_names[var] + "_";
    write_pgm(dir / (prefix + "truth_t0.pgm"), t0, m.n_lat(), m.n_lon(), hash);
    write_pgm(dir / (prefix + "truth_t1.pgm"), t1, m.n_lat(), m.n_lon(), hash);
    write_pgm(dir / (prefix + "pred_t1.pgm"), p1, m.n_lat(), m.n_lon(), hash);
    write_pgm(dir / (prefix + "truth_diff.pgm"), diff, m.n_lat(), m.n_lon(), hash);
    write_pgm(dir / (prefix + "pred_error.pgm"), error, m.n_lat(), m.n_lon(), hash);
}

int cmd_eval(Context& ctx, const json& cfg, const fs::path& data_path, const fs::path& ckpt_path) {
    if (data_path.empty() || ckpt_path.empty()) throw InvalidInput("eval needs --data and --checkpoint");
    if (!fs::exists(ckpt_path)) throw InvalidInput("missing checkpoint " + ckpt_path.string());
    const Dataset data = load_dataset(data_path);
    const Checkpoint ck = load_checkpoint(ckpt_path);
    const EvalOptions opts = eval_options(cfg, data);
    const json e = cfg.at("eval");
    const auto cases = e.value("cases", std::vector<std::size_t>{0});
    const std::string map_var = e.value("map_variable", data.manifest.var_names.front());
    const auto it = std::find(data.manifest.var_names.begin(), data.manifest.var_names.end(), map_var);
    if (it == data.manifest.var_names.end()) throw InvalidInput("unknown map variable " + map_var);

    const std::string ckpt_hash = file_hash(ckpt_path);
    json effective{{"command", "eval"},
                   {"checkpoint_hash", ckpt_hash},
                   {"dataset", dataset_info(data_path, data)},
                   {"eval",
                    {{"lead_hours", opts.lead_hours},
                     {"max_windows", opts.max_windows},
                     {"cases", cases},
                     {"map_variable", map_var}}}};
    const std::string hash = config_hash(effective);
    effective["config_hash"] = hash;
    const fs::path run = make_run_dir(ctx.root, "eval", hash);
    write_json(run / "config.json", effective);

    EvalReport report = evaluate(ck.model, data, opts);
    report.checkpoint_hash = ckpt_hash;
    report.config_hash = hash;
    write_json(run / "report.json", report.to_json());
    write_text(run / "report.csv", report.to_csv());
    for (std::size_t c : cases) {
        emit_case_maps(run / "maps", data, ck.model, c,
                       static_cast<std::size_t>(it - data.manifest.var_names.begin()), hash);
    }
    ctx.out << "run " << run.string() << "\nconfig_hash " << hash << "\n";
    for (const MetricCell& c : report.cells) {
        ctx.out << c.forecaster << " " << c.variable << " +" << fmt(c.lead_hours) << "h rmse "
                << fmt(c.rmse) << " acc " << (c.acc ? fmt(*c.acc) : std::string("null")) << "\n";
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(Context& ctx, const json& cfg, const fs::path& data_path) {
    if (data_path.empty()) throw InvalidInput("ablate needs --data");
    const Dataset data = load_dataset(data_path);
    const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
    EvalOptions opts = eval_options(cfg, data);
    opts.baselines = true;
    const std::size_t lead = lead_steps(opts.lead_hours.front(), data.manifest.timestep_hours);

    struct Variant {
        const char* name;
        const char* key;
    };
    const std::vector<Variant> variants{
        {"full", nullptr}, {"w/o FFT", "use_fft"}, {"w/o Prompt", "use_prompt"}, {"w/o MoE", "use_moe"}};

    json effective{{"command", "ablate"},
                   {"model", cfg.at("model")},
                   {"train", tc.to_json()},
                   {"dataset", dataset_info(data_path, data)},
                   {"eval", {{"lead_hours", opts.lead_hours}, {"max_windows", opts.max_windows}}}};
    const std::string hash = config_hash(effective);
    effective["config_hash"] = hash;
    const fs::path run = make_run_dir(ctx.root, "ablate", hash);
    write_json(run / "config.json", effective);
    ctx.out << "run " << run.string() << "\nconfig_hash " << hash << "\n";

    json rows = json::array();
    std::ostringstream csv;
    csv << "configuration,config_hash";
    for (const auto& v : data.manifest.var_names) csv << ",rmse_" << v << ",acc_" << v;
    csv << ",mean_rmse\n";
    std::vector<double> mean_rmse;
    for (const Variant& v : variants) {
        json c = cfg;
        if (v.key) c["model"][v.key] = false;
        const ModelConfig mc = model_for_dataset(c, data);
        const std::string row_hash = config_hash({{"command", "train"},
                                                  {"model", mc.to_json()},
                                                  {"train", tc.to_json()},
                                                  {"dataset", dataset_info(data_path, data)}});
        TrainState state = initial_train_state(mc, tc);
        train(data, tc, row_hash, state);
        const EvalReport r = evaluate(state.best, data, opts);
        json row{{"configuration", v.name}, {"config_hash", row_hash}};
        csv << v.name << "," << row_hash;
        for (const auto& var : data.manifest.var_names) {
            const MetricCell& cell = r.find("model", var, lead);
            row["rmse"][var] = cell.rmse;
            row["acc"][var] = cell.acc ? json(*cell.acc) : json(nullptr);
            csv << "," << fmt(cell.rmse, 10) << "," << (cell.acc ? fmt(*cell.acc, 10) : "null");
        }
        mean_rmse.push_back(r.mean_rmse("model", lead));
        row["mean_rmse"] = mean_rmse.back();
        row["persistence_mean_rmse"] = r.mean_rmse("persistence", lead);
        csv << "," << fmt(mean_rmse.back(), 10) << "\n";
        rows.push_back(row);
        ctx.out << v.name << " mean_rmse " << fmt(mean_rmse.back()) << " (" << row_hash << ")\n";
    }
    json ordering;
    bool full_best = true;
    std::size_t worst = 1;
    for (std::size_t i = 1; i < variants.size(); ++i) {
        const bool ok = mean_rmse[0] <= mean_rmse[i];
        ordering["full_le_" + std::string(variants[i].name)] = ok;
        full_best = full_best && ok;
        if (mean_rmse[i] > mean_rmse[worst]) worst = i;
    }
    ordering["full_le_all"] = full_best;
    ordering["most_harmful_removal"] = variants[worst].name;
    ordering["fft_removal_most_harmful"] = worst == 1;
    write_json(run / "ablation.json", {{"config_hash", hash},
                                       {"lead_steps", lead},
                                       {"rows", rows},
                                       {"expected_ordering", ordering}});
    write_text(run / "ablation.csv", csv.str());
    ctx.out << "full <= every ablation: " << (full_best ? "yes" : "no")
            << "; most harmful removal: " << variants[worst].name << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

json gradcheck_model_defaults() {
    ModelConfig c;
    c.n_vars = 2;
    c.n_lat = 8;
    c.n_lon = 8;
    c.history = 3;
    c.latent = 8;
    c.experts = 4;
    c.bands = 3;
    c.prompt_tokens = 4;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    return c.to_json();
}

int cmd_gradcheck(Context& ctx, const json& cfg, const GradcheckOptions& opts,
                  const std::string& dtype) {
    if (dtype != "float64") {
        ctx.err << "gradcheck runs in float64 only (got " << dtype << ")\n";
        return kExitValidation;
    }
    json m = gradcheck_model_defaults();
    m.merge_patch(cfg.at("model"));
    ModelConfig mc = ModelConfig::from_json(m);
    mc.validate();
    json effective{{"command", "gradcheck"},
                   {"model", mc.to_json()},
                   {"gradcheck",
                    {{"per_module", opts.per_module},
                     {"step", opts.step},
                     {"tolerance", opts.tolerance},
                     {"seed", opts.seed},
                     {"jitter", opts.jitter},
                     {"corrupt", opts.corrupt}}}};
    const std::string hash = config_hash(effective);
    effective["config_hash"] = hash;
    const fs::path run = make_run_dir(ctx.root, "gradcheck", hash);
    write_json(run / "config.json", effective);
    const GradcheckReport r = gradcheck(mc, opts);
    json j = r.to_json();
    j["config_hash"] = hash;
    j["dtype"] = "float64";
    write_json(run / "gradcheck.json", j);
    ctx.out << "run " << run.string() << "\n";
    for (const std::string& mod : kGradcheckModules) {
        double worst = 0.0;
        for (const auto& e : r.entries) {
            if (e.module == mod) worst = std::max(worst, e.rel_error);
        }
        ctx.out << mod << ": " << r.checked.at(mod) << " checked, " << r.failed.at(mod)
                << " failed, worst rel error " << fmt(worst, 3) << "\n";
    }
    ctx.out << "gradcheck " << (r.passed ? "PASSED" : "FAILED") << "\n";
    return r.passed ? kExitOk : kExitValidation;
}

// ---------------------------------------------------------------------------
// prop1

GridField square_field(std::size_t n, std::vector<double> values) {
    std::vector<double> lats(n), lons(n);
    for (std::size_t i = 0; i < n; ++i) {
        lats[i] = 80.0 - 160.0 * static_cast<double>(i) / static_cast<double>(n - 1);
        lons[i] = 360.0 * static_cast<double>(i) / static_cast<double>(n);
    }
    return GridField({"f"}, lats, lons, std::move(values));
}

int cmd_prop1(Context& ctx, std::size_t fields, std::uint64_t seed, double tolerance) {
    json effective{{"command", "prop1"},
                   {"prop1", {{"fields", fields}, {"seed", seed}, {"tolerance", tolerance},
                              {"sizes", {4, 8}}}}};
    const std::string hash = config_hash(effective);
    effective["config_hash"] = hash;
    const fs::path run = make_run_dir(ctx.root, "prop1", hash);
    write_json(run / "config.json", effective);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    json sizes = json::array();
    bool passed = true;
    for (std::size_t n : {4, 8}) {
        double worst_identity = 0.0, worst_roundtrip = 0.0;
        for (std::size_t k = 0; k < fields; ++k) {
            std::vector<double> v(n * n);
            for (double& x : v) x = normal(rng);
            const GridField f = square_field(n, v);
            for (std::size_t u = 0; u < n; ++u) {
                for (std::size_t w = 0; w < n; ++w) {
                    worst_identity = std::max(worst_identity, prop1_coefficients(f, u, w).identity_residual);
                }
            }
            worst_roundtrip = std::max(worst_roundtrip, prop1_roundtrip_check(f, tolerance).max_abs_error);
        }
        const bool ok = worst_identity <= tolerance && worst_roundtrip <= tolerance;
        passed = passed && ok;
        sizes.push_back({{"n", n},
                         {"fields", fields},
                         {"max_identity_residual", worst_identity},
                         {"max_roundtrip_error", worst_roundtrip},
                         {"passed", ok}});
        ctx.out << n << "x" << n << ": identity residual " << fmt(worst_identity, 3)
                << ", round-trip error " << fmt(worst_roundtrip, 3) << (ok ? " ok" : " FAIL") << "\n";
    }
    write_json(run / "prop1.json", {{"config_hash", hash},
                                    {"tolerance", tolerance},
                                    {"sizes", sizes},
                                    {"passed", passed},
                                    {"ambiguity_note", kProp1AmbiguityNote}});
    ctx.out << kProp1AmbiguityNote << "\n";
    ctx.out << "run " << run.string() << "\nprop1 " << (passed ? "PASSED" : "FAILED") << "\n";
    return passed ? kExitOk : kExitValidation;
}

fs::path output_root(const std::string& flag, const json& file) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
    if (file.contains("output_root")) return file.at("output_root").get<std::string>();
    return "runs";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Frequency-domain climate forecasting toolkit"};
    app.require_subcommand(1);
    std::string config_path, out_root;
    app.add_option("--config", config_path, "JSON config file (flags take precedence)");
    app.add_option("--out", out_root, std::string("output root (else $") + kOutputRootEnv + ")");

    Flags synth_flags, train_flags, eval_flags, ablate_flags, grad_flags;

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    std::string synth_dir;
    bool force = false;
    synth->add_option("--dir", synth_dir, "dataset directory (default <out>/data)");
    synth->add_flag("--force", force, "overwrite an existing dataset");
    synth_flags.option<std::string>(synth, "--name", "synthetic", "name", "dataset name");
    synth_flags.option<std::size_t>(synth, "--steps", "synthetic", "n_steps", "time steps");
    synth_flags.option<std::size_t>(synth, "--lat", "synthetic", "n_lat", "latitude points");
    synth_flags.option<std::size_t>(synth, "--lon", "synthetic", "n_lon", "longitude points");
    synth_flags.option<std::uint64_t>(synth, "--seed", "synthetic", "seed", "random seed");
    synth_flags.option<double>(synth, "--noise", "synthetic", "noise", "observation noise");
    synth_flags.option<double>(synth, "--diffusion", "synthetic", "diffusion", "diffusion per step");

    auto* trn = app.add_subcommand("train", "train a model");
    std::string data_path, resume;
    trn->add_option("--data", data_path, "dataset manifest");
    trn->add_option("--resume", resume, "continue the run in this directory");
    add_model_flags(trn, train_flags);
    add_train_flags(trn, train_flags);

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt;
    ev->add_option("--data", data_path, "dataset manifest")->required();
    ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval_flags.option<std::vector<double>>(ev, "--lead-hours", "eval", "lead_hours", "lead times");
    eval_flags.option<std::vector<std::size_t>>(ev, "--cases", "eval", "cases",
                                                "test-split offsets for heatmaps");
    eval_flags.option<std::size_t>(ev, "--max-windows", "eval", "max_windows",
                                   "evaluate at most this many windows");
    eval_flags.option<std::string>(ev, "--map-var", "eval", "map_variable", "heatmap variable");

    auto* abl = app.add_subcommand("ablate", "train and compare the four ablation variants");
    abl->add_option("--data", data_path, "dataset manifest")->required();
    add_model_flags(abl, ablate_flags);
    add_train_flags(abl, ablate_flags);
    ablate_flags.option<std::vector<double>>(abl, "--lead-hours", "eval", "lead_hours", "lead time");
    ablate_flags.option<std::size_t>(abl, "--max-windows", "eval", "max_windows",
                                     "evaluate at most this many windows");

    auto* gc = app.add_subcommand("gradcheck", "compare gradients with finite differences");
    GradcheckOptions gopts;
    std::string dtype = "float64";
    gc->add_option("--per-module", gopts.per_module, "parameters sampled per module");
    gc->add_option("--step", gopts.step, "central-difference step");
    gc->add_option("--tolerance", gopts.tolerance, "relative error tolerance");
    gc->add_option("--seed", gopts.seed, "random seed");
    gc->add_option("--dtype", dtype, "must be float64");
    gc->add_flag("--corrupt", gopts.corrupt, "perturb one analytic gradient (negative control)");
    add_model_flags(gc, grad_flags);

    auto* p1 = app.add_subcommand("prop1", "square-grid transform identity checks");
    std::size_t fields = 50;
    std::uint64_t p1_seed = 0;
    double p1_tol = 1e-9;
    p1->add_option("--fields", fields, "random fields per grid size");
    p1->add_option("--seed", p1_seed, "random seed");
    p1->add_option("--tolerance", p1_tol, "pass threshold");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        Context ctx{out, err, json::object(), {}};
        if (!config_path.empty()) ctx.file = load_json(config_path);
        ctx.root = output_root(out_root, ctx.file);
        const json defaults{{"model", json::object()},
                            {"train", json::object()},
                            {"synthetic", json::object()},
                            {"eval", json::object()}};
        if (synth->parsed()) return cmd_synth(ctx, layered(ctx, synth_flags, defaults), synth_dir, force);
        if (trn->parsed()) return cmd_train(ctx, layered(ctx, train_flags, defaults), data_path, resume);
        if (ev->parsed()) return cmd_eval(ctx, layered(ctx, eval_flags, defaults), data_path, ckpt);
        if (abl->parsed()) return cmd_ablate(ctx, layered(ctx, ablate_flags, defaults), data_path);
        if (gc->parsed()) return cmd_gradcheck(ctx, layered(ctx, grad_flags, defaults), gopts, dtype);
        if (p1->parsed()) return cmd_prop1(ctx, fields, p1_seed, p1_tol);
    } catch (const InvalidConfig& e) {
        err << "invalid configuration: " << e.what() << "\n";
        return kExitValidation;
    } catch (const InvalidInput& e) {
        err << "invalid input: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ShapeError& e) {
        err << "shape mismatch: " << e.what() << "\n";
        return kExitValidation;
    } catch (const json::exception& e) {
        err << "invalid configuration: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}

}  // namespace climatellm
