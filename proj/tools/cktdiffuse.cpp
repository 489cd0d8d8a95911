// cktdiffuse: dataset -> train -> generate -> bench -> report.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cktdiffuse/bench.hpp"
#include "cktdiffuse/config.hpp"
#include "cktdiffuse/dataset.hpp"
#include "cktdiffuse/generate.hpp"
#include "cktdiffuse/netlist.hpp"
#include "cktdiffuse/training.hpp"

namespace fs = std::filesystem;
using namespace cktdiffuse;
using nlohmann::json;

namespace {

enum Exit : int {
    kOk = 0,
    kOther = 1,
    kUsage = 2,
    kMissingInput = 3,
    kHashMismatch = 4,
    kMalformedSpec = 5,
    kIo = 6,
};

struct CliError : std::runtime_error {
    int code;
    CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string home;
    bool force = false;
    std::size_t jobs = 1;

    std::size_t count = 0;
    std::string dataset_path;
    std::string model_path;
    std::string out;
    std::string spec_path;
    bool normalized = false;
    int interval = 0;
    std::string space = "low";
    std::size_t samples = 50;
    double tol = 0.0;
    bool dump_op = false;
    bool plot_data = false;
    std::vector<std::string> inputs;
};

std::string home_dir(const Options& o) {
    if (!o.home.empty()) return o.home;
    if (const char* env = std::getenv("CKT_DIFFUSE_HOME"); env && *env) return env;
    return "cktdiffuse_runs";
}

std::string in_home(const Options& o, const std::string& given, const std::string& name) {
    return given.empty() ? (fs::path(home_dir(o)) / name).string() : given;
}

RunConfig load_run_config(const Options& o) {
    RunConfig cfg;
    if (!o.config_path.empty()) {
        if (!fs::exists(o.config_path)) throw CliError(kMissingInput, "config not found: " + o.config_path);
        try {
            cfg = load_config(o.config_path);
        } catch (const json::exception& e) {
            throw CliError(kUsage, "bad config " + o.config_path + ": " + e.what());
        }
    }
    if (o.seed) cfg.seed = *o.seed;
    if (o.interval > 0) cfg.interval = o.interval;
    return cfg;
}

void ensure_writable(const std::string& path, bool force) {
    if (fs::exists(path) && !force) throw CliError(kIo, path + " exists (use --force to overwrite)");
    const auto dir = fs::path(path).parent_path();
    std::error_code ec;
    if (!dir.empty()) fs::create_directories(dir, ec);
    if (ec) throw CliError(kIo, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CliError(kIo, "cannot write " + path);
    out << text;
    if (!out) throw CliError(kIo, "write failed: " + path);
}

std::unique_ptr<ModelBundle> load_model(const Options& o, const RunConfig& cfg) {
    const auto path = in_home(o, o.model_path, "model.json");
    if (!fs::exists(path)) throw CliError(kMissingInput, "checkpoint not found: " + path + " (run train first)");
    try {
        return load_checkpoint(path, model_hash(cfg));
    } catch (const HashMismatchError& e) {
        throw CliError(kHashMismatch, e.what());
    }
}

/// Spec file: {"Pdiss": ..., "GainDC": ..., ...} with all 13 metrics, SI units
/// unless --normalized. A top-level "spec" object is also accepted.
SpecVector read_spec(const std::string& path, bool normalized) {
    if (path.empty()) throw CliError(kUsage, "--spec is required");
    if (!fs::exists(path)) throw CliError(kMissingInput, "spec not found: " + path);
    json j;
    try {
        std::ifstream in(path);
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw CliError(kMalformedSpec, "spec " + path + " is not JSON: " + e.what());
    }
    if (j.is_object() && j.contains("spec")) j = j["spec"];
    if (!j.is_object()) throw CliError(kMalformedSpec, "spec must be a JSON object");
    MetricsVector v{};
    std::vector<bool> seen(kMetricCount, false);
    for (const auto& [key, val] : j.items()) {
        Metric m;
        try {
            m = metric_from_name(key);
        } catch (const std::invalid_argument&) {
            throw CliError(kMalformedSpec, "unknown metric in spec: " + key);
        }
        if (!val.is_number() || !std::isfinite(val.get<double>()))
            throw CliError(kMalformedSpec, "metric " + key + " is not a finite number");
        v[idx(m)] = val.get<double>();
        seen[idx(m)] = true;
    }
    for (std::size_t i = 0; i < kMetricCount; ++i)
        if (!seen[i]) throw CliError(kMalformedSpec, "spec is missing " + std::string(metric_name(static_cast<Metric>(i))));
    return normalized ? v : normalize(v);
}

json metrics_json(const MetricsVector& m) {
    json j = json::object();
    for (std::size_t i = 0; i < kMetricCount; ++i) j[std::string(metric_name(static_cast<Metric>(i)))] = m[i];
    return j;
}

// -----------------------------------------------------------------------------

int cmd_dataset(const Options& o) {
    auto cfg = load_run_config(o);
    const std::size_t count = o.count ? o.count : cfg.dataset.count;
    cfg.dataset.count = count;
    const auto path = in_home(o, o.dataset_path, "dataset.jsonl");
    const auto summary_path = path + ".summary.json";
    ensure_writable(path, o.force);
    ensure_writable(summary_path, o.force);
    const auto hash = dataset_hash(cfg);
    DatasetSummary s;
    try {
        s = build_dataset(count, cfg.seed, cfg.dataset, path, o.jobs, hash);
    } catch (const DatasetIoError& e) {
        throw CliError(kIo, e.what());
    }
    json j = to_json(s);
    j["config"] = cfg;
    write_text(summary_path, j.dump(2) + "\n");

    std::cout << "wrote " << s.attempted << " records to " << path << " (" << s.valid << " valid, "
              << std::fixed << std::setprecision(1) << 100.0 * s.valid_fraction() << "%)\n";
    std::cout << "config hash " << hash << "\n";
    std::cout << "nodes histogram:";
    for (const auto& [n, c] : s.node_histogram) std::cout << ' ' << n << ':' << c;
    std::cout << '\n';
    return kOk;
}

int cmd_train(const Options& o) {
    const auto cfg = load_run_config(o);
    const auto data = in_home(o, o.dataset_path, "dataset.jsonl");
    if (!fs::exists(data)) throw CliError(kMissingInput, "dataset not found: " + data + " (run dataset first)");
    const auto model = in_home(o, o.model_path, "model.json");
    const auto loss_csv = (fs::path(model).parent_path() / "train_loss.csv").string();
    ensure_writable(model, o.force);
    ensure_writable(loss_csv, o.force);

    std::vector<DatasetRecord> records;
    try {
        records = load_dataset(data);
    } catch (const DatasetIoError& e) {
        throw CliError(kIo, e.what());
    }
    const auto expect = dataset_hash(cfg);
    for (const auto& r : records)
        if (r.config_hash != expect)
            throw CliError(kHashMismatch, "dataset " + data + " record " + std::to_string(r.id) + " has config hash " +
                                              r.config_hash + ", expected " + expect);
    const auto examples = training_examples(records, cfg.model);
    if (examples.empty()) throw CliError(kMissingInput, "dataset has no usable valid records");
    std::cout << "training on " << examples.size() << " valid records of " << records.size() << '\n';

    ModelBundle mb(cfg);
    Rng rng(derive_seed(cfg.seed, 0x747261696eULL));
    std::ostringstream csv;
    csv << "stage,step,loss\n";
    csv.precision(8);
    train_all(mb, examples, rng, [&](std::string_view stage, int step, double loss) {
        csv << stage << ',' << step << ',' << loss << '\n';
        if ((step + 1) % 500 == 0) std::cerr << stage << " step " << step + 1 << " loss " << loss << '\n';
    });
    save_checkpoint(mb, model);
    write_text(loss_csv, csv.str());
    std::cout << "count accuracy " << std::setprecision(3) << count_accuracy(mb, examples) << '\n';
    std::cout << "wrote " << model << " (config hash " << mb.hash << ")\n";
    return kOk;
}

int cmd_generate(const Options& o) {
    const auto cfg = load_run_config(o);
    const auto spec = read_spec(o.spec_path, o.normalized);
    const auto mb = load_model(o, cfg);
    const auto out = fs::path(o.out.empty() ? (fs::path(home_dir(o)) / "generated").string() : o.out);
    const auto circuit_path = (out / "circuit.json").string();
    const auto netlist_path = (out / "circuit.sp").string();
    const auto metrics_path = (out / "metrics.json").string();
    ensure_writable(circuit_path, o.force);
    ensure_writable(metrics_path, o.force);

    Rng rng(derive_seed(cfg.seed, 0x67656eULL));
    const auto res = generate(spec, model_denoisers(*mb), mb->schedule, cfg.interval, rng);

    json circuit{{"config_hash", mb->hash},
                 {"seed", cfg.seed},
                 {"interval", cfg.interval},
                 {"nodes", res.nodes},
                 {"valid", res.valid},
                 {"violations", to_string(res.report)},
                 {"denoiser_calls", {{"discrete", res.discrete_calls}, {"continuous", res.continuous_calls}}},
                 {"degenerate_posteriors", res.degenerate},
                 {"graph", to_json(res.graph)}};
    write_text(circuit_path, circuit.dump(2) + "\n");

    const MetricsVector required = denormalize(spec);
    json report{{"config_hash", mb->hash}, {"required", metrics_json(required)}, {"valid", res.valid}};
    if (res.valid) {
        ensure_writable(netlist_path, o.force);
        const auto nl = expand(res.graph);
        write_text(netlist_path, emit_netlist(nl));
        const auto ev = evaluate(nl, required[idx(Metric::CL)], cfg.dataset.evaluator);
        auto actual = ev.metrics;
        actual[idx(Metric::CL)] = required[idx(Metric::CL)];
        report["actual"] = metrics_json(actual);
        report["sim_valid"] = ev.valid;
        report["reason"] = ev.reason;
        try {
            report["fitness"] = fitness(required, actual);
            report["fom"] = fom(actual);
        } catch (const std::invalid_argument& e) {
            report["fitness"] = nullptr;
            report["score_error"] = e.what();
        }
        if (o.dump_op) {
            std::ostringstream os;
            write_op_csv(os, ev);
            write_text((out / "op.csv").string(), os.str());
        }
    }
    write_text(metrics_path, report.dump(2) + "\n");

    std::cout << (res.valid ? "valid" : "invalid") << " circuit with " << res.nodes << " devices -> " << circuit_path
              << '\n';
    if (!res.valid) std::cout << to_string(res.report) << '\n';
    if (report.contains("fitness") && !report["fitness"].is_null())
        std::cout << "fitness " << report["fitness"].get<double>() << ", FOM " << report["fom"].get<double>() << '\n';
    return kOk;
}

int cmd_bench(const Options& o) {
    const auto cfg = load_run_config(o);
    BenchOptions opt;
    try {
        opt.space = space_from_name(o.space);
    } catch (const std::invalid_argument& e) {
        throw CliError(kUsage, e.what());
    }
    opt.samples = o.samples;
    opt.interval = cfg.interval;
    opt.seed = cfg.seed;
    opt.fitness.tol = o.tol;
    opt.evaluator = cfg.dataset.evaluator;
    opt.jobs = o.jobs;
    const auto mb = load_model(o, cfg);

    const auto dir = fs::path(o.out.empty() ? (fs::path(home_dir(o)) / "bench").string() : o.out);
    const auto stem = (dir / ("bench_" + o.space + "_i" + std::to_string(opt.interval))).string();
    ensure_writable(stem + ".csv", o.force);
    ensure_writable(stem + ".json", o.force);

    auto rep = run_bench(opt, model_denoisers(*mb), mb->schedule);
    rep.config_hash = mb->hash;
    std::ostringstream csv;
    write_bench_csv(csv, rep);
    write_text(stem + ".csv", csv.str());
    write_text(stem + ".json", to_json(rep).dump(2) + "\n");
    if (o.plot_data) {
        std::ostringstream tol, cg;
        write_tolerance_plot(tol, rep);
        write_cgei_plot(cg, rep);
        write_text(stem + ".tol.dat", tol.str());
        write_text(stem + ".cgei.dat", cg.str());
    }

    const auto& s = rep.summary;
    std::cout << std::fixed << std::setprecision(3);
    std::cout << "space " << rep.space << ", interval " << rep.interval << ", samples " << s.samples << '\n';
    if (s.valid_rate) std::cout << "valid rate " << *s.valid_rate << '\n';
    if (s.fitness) std::cout << "fitness " << s.fitness->mean << " +- " << s.fitness->std << " (tol " << o.tol << ")\n";
    if (s.fom) std::cout << "FOM " << s.fom->mean << " +- " << s.fom->std << ", best " << s.fom->max << '\n';
    if (s.seconds) std::cout << "time " << s.seconds->mean << " s per circuit\n";
    std::cout << "wrote " << stem << ".csv and .json\n";
    return kOk;
}

std::string fmt(const json& v, int precision = 3) {
    if (v.is_null()) return "-";
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v.get<double>();
    return os.str();
}

int cmd_report(const Options& o) {
    std::vector<std::string> files = o.inputs;
    if (files.empty()) {
        const auto dir = fs::path(home_dir(o)) / "bench";
        if (fs::exists(dir))
            for (const auto& e : fs::directory_iterator(dir))
                if (e.path().extension() == ".json") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) throw CliError(kMissingInput, "no bench reports found (run bench first)");

    std::vector<json> reports;
    for (const auto& f : files) {
        if (!fs::exists(f)) throw CliError(kMissingInput, "report not found: " + f);
        try {
            std::ifstream in(f);
            reports.push_back(json::parse(in));
        } catch (const json::exception& e) {
            throw CliError(kIo, "cannot parse " + f + ": " + e.what());
        }
    }

    std::cout << "Sampling spaces (interval 1)\n";
    std::cout << std::left << std::setw(10) << "space" << std::setw(22) << "best FOM" << std::setw(26) << "FOM"
              << std::setw(26) << "fitness" << "valid rate\n";
    for (const auto& p : kPublishedSpaces) {
        const std::string name(space_name(p.space));
        for (const auto& r : reports) {
            if (r["space"] != name || r["interval"] != 1) continue;
            const auto& a = r["aggregate"];
            const auto& fo = a["fom"];
            const auto& fi = a["fitness"];
            std::cout << std::setw(10) << name << std::setw(22) << (fo.is_null() ? "-" : fmt(fo["max"], 1))
                      << std::setw(26) << (fo.is_null() ? "-" : fmt(fo["mean"], 1) + " +- " + fmt(fo["std"], 1))
                      << std::setw(26) << (fi.is_null() ? "-" : fmt(fi["mean"]) + " +- " + fmt(fi["std"]))
                      << fmt(a["valid_rate"]) << "   measured, n=" << a["samples"] << '\n';
        }
        std::ostringstream fom, fit;
        fom << p.fom_mean << " +- " << p.fom_std;
        fit << p.fitness_mean << " +- " << p.fitness_std;
        std::cout << std::setw(10) << name << std::setw(22) << p.best_fom << std::setw(26) << fom.str() << std::setw(26)
                  << fit.str() << p.valid_rate << "   published\n";
    }

    std::cout << "\nInterval steps (external space)\n";
    std::cout << std::setw(10) << "interval" << std::setw(26) << "fitness" << "seconds\n";
    for (const auto& p : kPublishedIntervals) {
        for (const auto& r : reports) {
            if (r["space"] != "external" || r["interval"] != p.interval) continue;
            const auto& a = r["aggregate"];
            std::cout << std::setw(10) << p.interval << std::setw(26)
                      << (a["fitness"].is_null() ? "-" : fmt(a["fitness"]["mean"]) + " +- " + fmt(a["fitness"]["std"]))
                      << (a["seconds"].is_null() ? "-" : fmt(a["seconds"]["mean"])) << "   measured, T="
                      << r["steps"] << '\n';
        }
        std::ostringstream fit, sec;
        fit << p.fitness_mean << " +- " << p.fitness_std;
        sec << p.seconds_mean << " +- " << p.seconds_std;
        std::cout << std::setw(10) << p.interval << std::setw(26) << fit.str() << sec.str() << "   published, T="
                  << kPublishedSteps << '\n';
    }

    std::cout << "\nCGEI\n";
    std::cout << std::setw(22) << "method" << std::setw(12) << "FOM" << std::setw(12) << "seconds" << "CGEI\n";
    for (const auto& p : kPublishedCgei)
        std::cout << std::setw(22) << (std::string(p.method) + " " + std::string(p.index)) << std::setw(12) << p.fom
                  << std::setw(12) << p.seconds << p.cgei << '\n';
    for (const auto& r : reports) {
        const auto& a = r["aggregate"];
        if (a["fom"].is_null() || a["best_fom_cgei"].is_null()) continue;
        std::cout << std::setw(22) << ("measured " + r["space"].get<std::string>() + " @" + std::to_string(r["interval"].get<int>()))
                  << std::setw(12) << fmt(a["fom"]["max"], 1) << std::setw(12) << fmt(a["seconds"]["mean"])
                  << fmt(a["best_fom_cgei"], 2) << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spec-conditioned op-amp topology and sizing by graph diffusion"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* c) {
        c->add_option("--config", o.config_path, "Run config JSON");
        c->add_option("--seed", o.seed, "Master seed (overrides the config)");
        c->add_option("--home", o.home, "Artifact directory (default $CKT_DIFFUSE_HOME or ./cktdiffuse_runs)");
        c->add_flag("--force", o.force, "Overwrite existing outputs");
    };

    auto* ds = app.add_subcommand("dataset", "Sample and evaluate random circuits into JSON-Lines");
    common(ds);
    ds->add_option("--count", o.count, "Number of records (default from config)");
    ds->add_option("--out", o.dataset_path, "Output path (.jsonl or .jsonl.gz)");
    ds->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "Train the count, structure and parameter models");
    common(tr);
    tr->add_option("--dataset", o.dataset_path, "Dataset path");
    tr->add_option("--model", o.model_path, "Checkpoint output path");

    auto* gen = app.add_subcommand("generate", "Generate one circuit for a spec");
    common(gen);
    gen->add_option("--spec", o.spec_path, "Spec JSON (metric name -> value)")->required();
    gen->add_flag("--normalized", o.normalized, "Spec values are already normalized");
    gen->add_option("--interval-step", o.interval, "Reverse-diffusion stride")->check(CLI::PositiveNumber);
    gen->add_option("--model", o.model_path, "Checkpoint path");
    gen->add_option("--out", o.out, "Output directory");
    gen->add_flag("--dump-op", o.dump_op, "Write the operating point CSV");

    auto* be = app.add_subcommand("bench", "Generate and score circuits for sampled specs");
    common(be);
    be->add_option("--space", o.space, "Sampling space")->check(CLI::IsMember({"external", "high", "medium", "low"}));
    be->add_option("--samples", o.samples, "Number of specs");
    be->add_option("--interval-step", o.interval, "Reverse-diffusion stride")->check(CLI::PositiveNumber);
    be->add_option("--tol", o.tol, "Fitness tolerance")->check(CLI::NonNegativeNumber);
    be->add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
    be->add_option("--model", o.model_path, "Checkpoint path");
    be->add_option("--out", o.out, "Output directory");
    be->add_flag("--emit-plot-data", o.plot_data, "Write gnuplot data files");

    auto* rp = app.add_subcommand("report", "Print measured and published tables");
    common(rp);
    rp->add_option("inputs", o.inputs, "Bench JSON reports (default: all under <home>/bench)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*ds) return cmd_dataset(o);
        if (*tr) return cmd_train(o);
        if (*gen) return cmd_generate(o);
        if (*be) return cmd_bench(o);
        if (*rp) return cmd_report(o);
    } catch (const CliError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.code;
    } catch (const HashMismatchError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kHashMismatch;
    } catch (const DatasetIoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOther;
    }
    return kUsage;
}
