#include "uaflow/cli/app.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "uaflow/cli/config.hpp"
#include "uaflow/cli/pipeline.hpp"
#include "uaflow/cli/report.hpp"
#include "uaflow/error.hpp"
#include "uaflow/eval.hpp"

#ifndef UAFLOW_REVISION
#define UAFLOW_REVISION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace uaflow::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

void make_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string cond_text(Condition c) { return c ? std::to_string(*c) : "-1"; }

json cond_json(Condition c) { return c ? json(*c) : json(nullptr); }

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": not valid JSON: " + e.what());
    }
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// --- train -------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string out;
    bool quiet = false;
};

void cmd_train(const TrainArgs& a) {
    const auto start = Clock::now();
    const RunConfig cfg = load_config(a.config);
    make_dir(a.out);
    Rng rng(stream_seed(cfg.seed, Stream::Data));
    const auto samples = data::draw(cfg.dataset, cfg.train_size, rng);

    const int every = std::max(1, cfg.train.steps / 10);
    auto progress = [&](const train::LossRecord& r) {
        if (!a.quiet && (r.step % every == 0 || r.step + 1 == cfg.train.steps)) {
            std::cerr << fmt::format("step {:>6}  loss {:.6f}\n", r.step, r.loss.total);
        }
    };
    const auto trained = train::train(model::VelocityModel(cfg.model), samples, cfg.train, paths::AffinePath{}, progress);
    const double train_seconds = seconds_since(start);

    const json snapshot = to_json(cfg);
    const std::string ckpt = "model.ckpt";
    model::save_checkpoint(trained.ema, (fs::path(a.out) / ckpt).string(),
                           json{{"config", snapshot}, {"revision", UAFLOW_REVISION}}.dump());

    CsvWriter loss({"step", "total", "nll_term", "correction_term"});
    Series total{"total", {}, {}};
    for (const auto& r : trained.curve) {
        loss.row({std::to_string(r.step), num(r.loss.total), num(r.loss.nll_term), num(r.loss.correction_term)});
        total.x.push_back(r.step);
        total.y.push_back(r.loss.total);
    }
    loss.save((fs::path(a.out) / "loss.csv").string());
    write_text((fs::path(a.out) / "loss.svg").string(), svg_plot({{"training loss", "step", "loss", {total}}}));

    write_json((fs::path(a.out) / "manifest.json").string(),
               {{"command", "train"},
                {"revision", UAFLOW_REVISION},
                {"seed", cfg.seed},
                {"config", snapshot},
                {"config_file", fs::absolute(a.config).string()},
                {"files", {{"checkpoint", ckpt}, {"loss_csv", "loss.csv"}, {"loss_plot", "loss.svg"}}},
                {"timings", {{"total_seconds", seconds_since(start)}, {"train_seconds", train_seconds}}}});
}

// --- sample ------------------------------------------------------------------

struct SampleArgs {
    std::string checkpoint;
    std::string out;
    std::size_t n = 100;
    std::uint64_t seed = 0;
    int steps = 50;
    std::string method = "heun";
    std::string cls;
    double w = 0.0;
    int cg_cadence = 2;
    double lambda_max = 0.0;
    double fixed_lambda = 0.0;
    std::string cov = "jvp";
    int probes = 1;
    int cadence = 1;
    bool spread = false;
    int spread_samples = 10;
    std::string score = "uaflow";
    double top_fraction = 0.1;
    int renoise = 8;
    double au_window = 0.25;
    bool log_sigma = false;
    int threads = 0;
};

struct SampleFlags {
    CLI::Option* w;
    CLI::Option* cg_cadence;
    CLI::Option* lambda_max;
    CLI::Option* fixed_lambda;
    CLI::Option* cov;
    CLI::Option* probes;
    CLI::Option* cadence;
    CLI::Option* spread;
    CLI::Option* spread_samples;
    CLI::Option* renoise;
    CLI::Option* au_window;
    CLI::Option* threads;
};

SampleOptions sample_options(const SampleArgs& a, const SampleFlags& f) {
    auto given = [](CLI::Option* o) { return o->count() > 0; };
    SampleOptions o;
    o.seed = a.seed;
    o.sampler.steps = a.steps;
    o.sampler.method = a.method == "euler" ? sample::Method::Euler : sample::Method::Heun;

    if (a.cls == "cycle") {
        o.cycle_classes = true;
    } else if (!a.cls.empty()) {
        try {
            std::size_t used = 0;
            o.cls = std::stoi(a.cls, &used);
            if (used != a.cls.size()) throw std::invalid_argument(a.cls);
        } catch (const std::exception&) {
            throw ConfigError("--class expects an integer or 'cycle', got '" + a.cls + "'");
        }
    }

    if (given(f.cg_cadence) && !given(f.w)) throw ConfigError("--cg-cadence needs --w");
    if (given(f.w)) {
        o.guidance.cg_enabled = true;
        o.guidance.w = a.w;
        o.guidance.cg_cadence = a.cg_cadence;
    }
    if (given(f.lambda_max) && given(f.fixed_lambda)) throw ConfigError("--lambda-max and --fixed-lambda are exclusive");
    if (given(f.lambda_max)) {
        o.guidance.cfg_enabled = true;
        o.guidance.lambda_max = a.lambda_max;
    }
    if (given(f.fixed_lambda)) o.guidance.fixed_lambda = a.fixed_lambda;
    o.guidance.record_sigma_pairs = a.log_sigma;

    o.score = a.score == "au" ? ScoreKind::Au : ScoreKind::Uaflow;
    if (o.score == ScoreKind::Au) {
        for (auto* opt : {f.cov, f.probes, f.cadence, f.spread, f.spread_samples}) {
            if (given(opt)) throw ConfigError(opt->get_name() + " does not apply to --score au");
        }
    } else {
        for (auto* opt : {f.renoise, f.au_window}) {
            if (given(opt)) throw ConfigError(opt->get_name() + " only applies to --score au");
        }
    }
    if (a.cov == "zero" && given(f.probes)) throw ConfigError("--probes does not apply to --cov zero");
    if (given(f.spread_samples) && !a.spread) throw ConfigError("--spread-samples needs --spread");
    o.uq.cov.kind = a.cov == "zero" ? uq::CovKind::Zero : a.cov == "mc" ? uq::CovKind::MonteCarlo : uq::CovKind::HutchinsonJVP;
    o.uq.cov.samples = a.cov == "mc" && !given(f.probes) ? 10 : a.probes;
    o.uq.cadence = a.cadence;
    o.uq.include_mean_spread_var = a.spread;
    o.uq.spread_samples = a.spread_samples;
    o.top_fraction = a.top_fraction;
    o.renoise = a.renoise;
    o.au_window = a.au_window;
    return o;
}

json sampling_json(const SampleArgs& a, const SampleOptions& o) {
    json g = {{"w", o.guidance.cg_enabled ? json(o.guidance.w) : json(nullptr)},
              {"cg_cadence", o.guidance.cg_cadence},
              {"lambda_max", o.guidance.cfg_enabled ? json(o.guidance.lambda_max) : json(nullptr)},
              {"fixed_lambda", o.guidance.fixed_lambda ? json(*o.guidance.fixed_lambda) : json(nullptr)},
              {"log_sigma", o.guidance.record_sigma_pairs}};
    return {{"n", a.n},
            {"seed", a.seed},
            {"steps", a.steps},
            {"method", a.method},
            {"class", a.cls.empty() ? json(nullptr) : json(a.cls)},
            {"guidance", g},
            {"score", a.score},
            {"cov", a.cov},
            {"probes", o.uq.cov.samples},
            {"cadence", a.cadence},
            {"spread", a.spread},
            {"spread_samples", a.spread_samples},
            {"top_fraction", a.top_fraction},
            {"renoise", a.renoise},
            {"au_window", a.au_window}};
}

void cmd_sample(const SampleArgs& a, const SampleFlags& f) {
    const auto start = Clock::now();
    const auto loaded = model::load_checkpoint(a.checkpoint);
    const auto& m = loaded.model;
    json meta;
    try {
        meta = json::parse(loaded.metadata_json);
    } catch (const json::exception&) {
        throw ConfigError(a.checkpoint + ": checkpoint metadata is not valid JSON");
    }
    if (a.n < 1) throw ConfigError("--n must be >= 1");
    const SampleOptions opts = sample_options(a, f);
    const int threads = f.threads->count() ? a.threads : default_threads();
    if (threads < 1) throw ConfigError("--threads must be >= 1");
    make_dir(a.out);

    const auto results = generate_many(m, opts, a.n, threads);
    const double sample_seconds = seconds_since(start);
    const fs::path out(a.out);
    const int dim = m.dim();

    std::vector<std::string> head{"index", "seed", "cond", "score"};
    std::vector<std::string> uhead{"index"};
    for (int d = 0; d < dim; ++d) {
        head.push_back(fmt::format("x{}", d));
        uhead.push_back(fmt::format("var{}", d));
    }
    CsvWriter samples(head), unc(uhead);
    CsvWriter lam({"index", "step", "t", "lambda_opt", "lambda_used"});
    bool have_lambda = false;
    std::vector<std::vector<guidance::LambdaLogEntry>> logs;
    json records = json::array();
    long floored = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        std::vector<std::string> row{std::to_string(i), std::to_string(r.seed), cond_text(r.cond), num(r.score)};
        std::vector<std::string> urow{std::to_string(i)};
        for (int d = 0; d < dim; ++d) {
            row.push_back(num(r.x[d]));
            urow.push_back(num(r.var_map[d]));
        }
        samples.row(std::move(row));
        unc.row(std::move(urow));
        for (const auto& e : r.lambda_log) {
            lam.row({std::to_string(i), std::to_string(e.step), num(e.t), num(e.lambda_opt), num(e.lambda_used)});
            have_lambda = true;
        }
        if (!r.lambda_log.empty()) logs.push_back(r.lambda_log);
        floored += r.floored;
        records.push_back({{"index", i},
                           {"sample", to_std(r.x)},
                           {"score", r.score},
                           {"cond", cond_json(r.cond)},
                           {"seed", r.seed},
                           {"method", a.score == "au" ? "au" : "uaflow"},
                           {"uncertainty_map", "uncertainty.csv"},
                           {"lambda_trace", r.lambda_log.empty() ? json(nullptr) : json("lambda.csv")}});
    }
    json files = {{"samples_csv", "samples.csv"}, {"uncertainty_csv", "uncertainty.csv"}, {"samples_plot", "samples.svg"}};
    samples.save((out / "samples.csv").string());
    unc.save((out / "uncertainty.csv").string());
    if (have_lambda) {
        lam.save((out / "lambda.csv").string());
        files["lambda_csv"] = "lambda.csv";
        CsvWriter corr({"step", "t", "pearson", "pairs"});
        for (const auto& c : guidance::sigma_correlation_by_step(logs)) {
            corr.row({std::to_string(c.step), num(c.t), num(c.pearson), std::to_string(c.pairs)});
        }
        corr.save((out / "sigma_correlation.csv").string());
        files["sigma_correlation_csv"] = "sigma_correlation.csv";
    }

    Series pts{"samples", {}, {}};
    for (const auto& r : results) {
        pts.x.push_back(r.x[0]);
        pts.y.push_back(dim > 1 ? r.x[1] : r.score);
    }
    Panel scatter{"generated samples", "x0", dim > 1 ? "x1" : "score", {pts}, true};
    write_text((out / "samples.svg").string(), svg_plot({scatter}));

    write_json((out / "manifest.json").string(),
               {{"command", "sample"},
                {"revision", UAFLOW_REVISION},
                {"seed", a.seed},
                {"config", meta.contains("config") ? meta["config"] : json(nullptr)},
                {"dataset", meta.contains("config") ? meta["config"]["dataset"] : json(nullptr)},
                {"checkpoint", fs::absolute(a.checkpoint).string()},
                {"sampling", sampling_json(a, opts)},
                {"dim", dim},
                {"threads", threads},
                {"variance_floored", floored},
                {"records", records},
                {"files", files},
                {"timings", {{"sample_seconds", sample_seconds}, {"total_seconds", seconds_since(start)}}}});
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
    std::string manifest;
    std::string out;
    std::string real;
    int real_n = 2000;
    std::uint64_t real_seed = 0;
    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    int k = 5;
    std::size_t eval_size = 0;
    std::uint64_t subsample_seed = 0;
};

Matrix reference_set(const json& manifest, const EvalArgs& a, const std::vector<eval::SampleRecord>& records) {
    if (!a.real.empty()) return read_points_csv(a.real);
    if (!manifest.contains("dataset") || manifest["dataset"].is_null()) {
        throw ConfigError("manifest names no dataset; pass --real");
    }
    const auto ds = dataset_from_json(manifest["dataset"]);
    // A run at one fixed class is compared against that class only.
    Condition only = records.front().cond;
    for (const auto& r : records) {
        if (r.cond != only) only = kNullCondition;
    }
    Rng rng(stream_seed(a.real_seed, Stream::Reference));
    if (!only || !ds.labeled) return data::draw(ds, a.real_n, rng).points;
    Matrix out(ds.dim(), a.real_n);
    Eigen::Index filled = 0;
    while (filled < a.real_n) {
        const auto batch = data::draw(ds, a.real_n, rng);
        for (Eigen::Index j = 0; j < batch.points.cols() && filled < a.real_n; ++j) {
            if (batch.labels[j] == *only) out.col(filled++) = batch.points.col(j);
        }
    }
    return out;
}

void cmd_eval(const EvalArgs& a) {
    const auto start = Clock::now();
    const json manifest = read_json(a.manifest);
    if (!manifest.contains("records") || !manifest["records"].is_array()) {
        throw ConfigError(a.manifest + ": manifest has no records list");
    }
    std::vector<eval::SampleRecord> records;
    try {
        for (const auto& r : manifest["records"]) {
            const auto x = r.at("sample").get<std::vector<double>>();
            eval::SampleRecord rec;
            rec.sample = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
            rec.score = r.at("score").get<double>();
            rec.cond = r.at("cond").is_null() ? kNullCondition : Condition(r.at("cond").get<int>());
            rec.seed = r.at("seed").get<std::uint64_t>();
            rec.method = r.value("method", std::string("uaflow"));
            records.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw ConfigError(a.manifest + ": malformed sample record: " + e.what());
    }
    if (records.empty()) throw ConfigError(a.manifest + ": manifest is empty (no sample records)");
    if (a.real_n < 2) throw ConfigError("--real-n must be >= 2");

    const Matrix real = reference_set(manifest, a, records);
    make_dir(a.out);
    eval::FilterOptions fo;
    fo.k = a.k;
    fo.eval_size = a.eval_size;
    fo.subsample_seed = a.subsample_seed;
    const auto reports = eval::filter_sweep(records, real, a.ratios, fo);

    const fs::path out(a.out);
    CsvWriter csv({"ratio", "precision", "recall", "energy_distance", "retained"});
    Series p{"precision", {}, {}}, r{"recall", {}, {}}, e{"energy_distance", {}, {}};
    for (const auto& rep : reports) {
        csv.row({num(rep.ratio), num(rep.precision), num(rep.recall), num(rep.energy_distance), std::to_string(rep.retained)});
        for (auto* s : {&p, &r, &e}) s->x.push_back(rep.ratio);
        p.y.push_back(rep.precision);
        r.y.push_back(rep.recall);
        e.y.push_back(rep.energy_distance);
    }
    csv.save((out / "eval.csv").string());
    write_text((out / "filtering.svg").string(),
               svg_plot({{"precision", "filtering ratio", "precision", {p}},
                         {"recall", "filtering ratio", "recall", {r}},
                         {"energy distance", "filtering ratio", "energy distance", {e}}}));
    write_json((out / "manifest.json").string(),
               {{"command", "eval"},
                {"revision", UAFLOW_REVISION},
                {"sample_manifest", fs::absolute(a.manifest).string()},
                {"real", a.real.empty() ? json(nullptr) : json(fs::absolute(a.real).string())},
                {"real_n", real.cols()},
                {"real_seed", a.real_seed},
                {"k", a.k},
                {"eval_size", a.eval_size},
                {"subsample_seed", a.subsample_seed},
                {"ratios", a.ratios},
                {"files", {{"eval_csv", "eval.csv"}, {"filtering_plot", "filtering.svg"}}},
                {"timings", {{"total_seconds", seconds_since(start)}}}});
}

// --- data --------------------------------------------------------------------

struct DataArgs {
    std::string config;
    std::string out;
    int n = 0;
};

void cmd_data(const DataArgs& a) {
    const RunConfig cfg = load_config(a.config);
    Rng rng(stream_seed(cfg.seed, Stream::Data));
    const auto s = data::draw(cfg.dataset, a.n > 0 ? a.n : cfg.train_size, rng);
    std::vector<std::string> head{"index", "label"};
    for (int d = 0; d < cfg.dataset.dim(); ++d) head.push_back(fmt::format("x{}", d));
    CsvWriter csv(head);
    for (Eigen::Index j = 0; j < s.points.cols(); ++j) {
        std::vector<std::string> row{std::to_string(j), std::to_string(s.labels[j])};
        for (Eigen::Index d = 0; d < s.points.rows(); ++d) row.push_back(num(s.points(d, j)));
        csv.row(std::move(row));
    }
    const fs::path out(a.out);
    if (out.has_parent_path()) make_dir(out.parent_path().string());
    csv.save(a.out);
}

} // namespace

int run(int argc, char** argv) {
    CLI::App app{"uaflow: uncertainty-aware flow matching on toy data"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("uaflow ") + UAFLOW_REVISION);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train a model from a YAML config");
    train->add_option("--config", ta.config, "YAML config file")->required();
    train->add_option("--out", ta.out, "output directory")->required();
    train->add_flag("--quiet", ta.quiet, "no progress on stderr");

    SampleArgs sa;
    SampleFlags sf{};
    auto* smp = app.add_subcommand("sample", "generate samples with uncertainty scores");
    smp->add_option("--checkpoint", sa.checkpoint, "checkpoint written by train")->required();
    smp->add_option("--out", sa.out, "output directory")->required();
    smp->add_option("--n", sa.n, "number of samples")->capture_default_str();
    smp->add_option("--seed", sa.seed, "run seed; sample i uses seed ^ i")->capture_default_str();
    smp->add_option("--steps", sa.steps, "sampling steps")->capture_default_str()->check(CLI::PositiveNumber);
    smp->add_option("--method", sa.method, "ODE solver")->capture_default_str()->check(CLI::IsMember({"euler", "heun"}));
    smp->add_option("--class", sa.cls, "class index, or 'cycle' for index mod classes");
    sf.w = smp->add_option("--w", sa.w, "U-CG scale");
    sf.cg_cadence = smp->add_option("--cg-cadence", sa.cg_cadence, "apply U-CG every k steps")->capture_default_str();
    sf.lambda_max = smp->add_option("--lambda-max", sa.lambda_max, "U-CFG clamp");
    sf.fixed_lambda = smp->add_option("--fixed-lambda", sa.fixed_lambda, "standard CFG with a constant scale");
    sf.cov = smp->add_option("--cov", sa.cov, "covariance option")->capture_default_str()->check(CLI::IsMember({"zero", "jvp", "mc"}));
    sf.probes = smp->add_option("--probes", sa.probes, "Hutchinson probes (jvp) or draws (mc, default 10)");
    sf.cadence = smp->add_option("--cadence", sa.cadence, "variance update every k steps")->capture_default_str();
    sf.spread = smp->add_flag("--spread", sa.spread, "add the mean-spread variance term");
    sf.spread_samples = smp->add_option("--spread-samples", sa.spread_samples, "draws for the spread term")->capture_default_str();
    smp->add_option("--score", sa.score, "uncertainty score")->capture_default_str()->check(CLI::IsMember({"uaflow", "au"}));
    smp->add_option("--top-fraction", sa.top_fraction, "fraction of elements averaged into the score")->capture_default_str();
    sf.renoise = smp->add_option("--renoise", sa.renoise, "AU re-noised states per step")->capture_default_str();
    sf.au_window = smp->add_option("--au-window", sa.au_window, "AU late-step window fraction")->capture_default_str();
    smp->add_flag("--log-sigma", sa.log_sigma, "log conditional/unconditional sigma pairs");
    sf.threads = smp->add_option("--threads", sa.threads, "worker threads (default: UAFLOW_THREADS or all cores)");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "filtering sweep with precision, recall and energy distance");
    ev->add_option("--manifest", ea.manifest, "manifest written by sample")->required();
    ev->add_option("--out", ea.out, "output directory")->required();
    ev->add_option("--real", ea.real, "reference points CSV (x0, x1, ... columns)");
    ev->add_option("--real-n", ea.real_n, "reference draws when --real is absent")->capture_default_str();
    ev->add_option("--real-seed", ea.real_seed, "seed for reference draws")->capture_default_str();
    ev->add_option("--ratios", ea.ratios, "filtering ratios")->delimiter(',')->capture_default_str();
    ev->add_option("--k", ea.k, "k for k-NN manifolds")->capture_default_str();
    ev->add_option("--eval-size", ea.eval_size, "subsample size per ratio (0 = all retained)")->capture_default_str();
    ev->add_option("--subsample-seed", ea.subsample_seed, "seed for subsampling")->capture_default_str();

    DataArgs da;
    auto* dat = app.add_subcommand("data", "export dataset draws to CSV");
    dat->add_option("--config", da.config, "YAML config file")->required();
    dat->add_option("--out", da.out, "output CSV")->required();
    dat->add_option("--n", da.n, "number of draws (default: dataset.size)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) cmd_train(ta);
        else if (*smp) cmd_sample(sa, sf);
        else if (*ev) cmd_eval(ea);
        else if (*dat) cmd_data(da);
        return kExitOk;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const SingularTimeError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const InvalidArgument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace uaflow::cli
