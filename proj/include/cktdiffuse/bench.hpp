#pragma once

// Scoring and the sampling benchmark: fitness against a requirement vector,
// FOM, CGEI, per-sample rows and their aggregates, report files.

#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "generate.hpp"
#include "perf_model.hpp"
#include "templates.hpp"

namespace cktdiffuse {

// -----------------------------------------------------------------------------
// Fitness
// -----------------------------------------------------------------------------

struct FitnessConfig {
    double tol = 0.0;
    // larger is better
    std::vector<Metric> class_a{Metric::GainDC, Metric::GBW, Metric::PM,   Metric::SRp,
                                Metric::SRn,    Metric::VOH, Metric::CMRR, Metric::PSRR};
    // smaller is better
    std::vector<Metric> class_b{Metric::Pdiss, Metric::VOL, Metric::Noise1k, Metric::Noise1G};

    [[nodiscard]] std::size_t np() const { return class_a.size() + class_b.size(); }
};

class FitnessError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// 1 minus the mean hinge shortfall over the scored metrics. Units cancel per metric.
[[nodiscard]] inline double fitness(const MetricsVector& required, const MetricsVector& actual,
                                    const FitnessConfig& cfg = {}) {
    const auto np = static_cast<double>(cfg.np());
    if (cfg.np() == 0) throw FitnessError("no scored metrics");
    if (!(cfg.tol >= 0.0)) throw FitnessError("tolerance must be non-negative");
    double f = 1.0;
    for (Metric m : cfg.class_a) {
        const double y = required[idx(m)];
        if (y == 0.0) throw FitnessError("required " + std::string(metric_name(m)) + " is zero");
        f -= std::max(0.0, (y - actual[idx(m)]) / y - cfg.tol) / np;
    }
    for (Metric m : cfg.class_b) {
        const double ya = actual[idx(m)];
        if (ya == 0.0) throw FitnessError("actual " + std::string(metric_name(m)) + " is zero");
        f -= std::max(0.0, (ya - required[idx(m)]) / ya - cfg.tol) / np;
    }
    return f;
}

/// GBW (MHz) * CL (pF) / Pdiss (mW).
[[nodiscard]] inline double fom(double gbw_mhz, double cl_pf, double pdiss_mw) {
    if (!(pdiss_mw > 0.0)) throw std::invalid_argument("fom needs positive power");
    return gbw_mhz * cl_pf / pdiss_mw;
}

/// FOM from SI metrics (Hz, F, W).
[[nodiscard]] inline double fom(const MetricsVector& m) {
    return fom(m[idx(Metric::GBW)] * 1e-6, m[idx(Metric::CL)] * 1e12, m[idx(Metric::Pdiss)] * 1e3);
}

[[nodiscard]] inline double cgei(double fom_value, double seconds) {
    if (!(seconds > 0.0)) throw std::invalid_argument("cgei needs positive time");
    return fom_value / seconds;
}

// -----------------------------------------------------------------------------
// Published reference values, printed next to measured ones
// -----------------------------------------------------------------------------

struct PublishedCgei {
    std::string_view method;
    std::string_view index;
    double fom;
    double seconds;
    double cgei;
};

inline constexpr std::array<PublishedCgei, 10> kPublishedCgei{{
    {"CktGNN", "-", 13.27, 0.13, 102},
    {"LADAC", "1", 102, 289, 0.35},
    {"LADAC", "2", 1250, 444, 2.81},
    {"MACE", "1", 478, 7035, 0.068},
    {"MACE", "2", 386, 7612, 0.051},
    {"MACE", "3", 129, 7377, 0.017},
    {"AmpAgent", "worst", 458, 545, 1.19},
    {"AmpAgent", "best", 179077, 696, 257.3},
    {"DiffCkt", "worst", 86, 7.69, 11.2},
    {"DiffCkt", "best", 4530, 7.97, 568},
}};

struct PublishedSpace {
    SpaceLevel space;
    double best_fom;
    double fom_mean, fom_std;
    double fitness_mean, fitness_std;
    double valid_rate;
};

inline constexpr std::array<PublishedSpace, 4> kPublishedSpaces{{
    {SpaceLevel::External, 4530, 2401, 723, 0.814, 0.115, 0.88},
    {SpaceLevel::High, 1837, 1250, 430, 0.845, 0.119, 0.88},
    {SpaceLevel::Medium, 745, 499, 207, 0.866, 0.120, 0.84},
    {SpaceLevel::Low, 523, 238, 153, 0.901, 0.081, 0.90},
}};

struct PublishedInterval {
    int interval;
    double fitness_mean, fitness_std;
    double seconds_mean, seconds_std;
};

inline constexpr std::array<PublishedInterval, 4> kPublishedIntervals{{
    {1, 0.853, 0.092, 7.67, 0.15},
    {5, 0.804, 0.181, 1.57, 0.08},
    {10, 0.757, 0.182, 0.86, 0.08},
    {20, 0.711, 0.244, 0.81, 0.09},
}};

inline constexpr int kPublishedSteps = 500;

// -----------------------------------------------------------------------------
// Rows and aggregates
// -----------------------------------------------------------------------------

struct BenchRow {
    std::size_t index = 0;
    SpecVector spec{};        // normalized requirement
    MetricsVector required{}; // SI units
    MetricsVector actual{};
    std::string graph_id;
    std::size_t nodes = 0;
    bool valid = false;     // structurally valid
    bool sim_valid = false; // evaluator validity (saturation, swing)
    std::string reason;
    std::optional<double> fitness;
    std::optional<double> fom;
    std::optional<double> cgei;
    double seconds = 0.0;
    int discrete_calls = 0;
    int continuous_calls = 0;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 for one value
    double max = 0.0;
};

[[nodiscard]] inline std::optional<Stat> stat_of(const std::vector<double>& v) {
    if (v.empty()) return std::nullopt;
    Stat s;
    s.max = v.front();
    for (double x : v) {
        s.mean += x;
        s.max = std::max(s.max, x);
    }
    s.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

struct BenchAggregate {
    std::size_t samples = 0;
    std::size_t valid = 0;
    std::size_t scored = 0;
    std::optional<double> valid_rate;
    std::optional<Stat> fitness;
    std::optional<Stat> fom;
    std::optional<Stat> seconds;
    std::optional<Stat> cgei;
    std::optional<double> best_fom_cgei;  // CGEI of the best-FOM row
};

[[nodiscard]] inline BenchAggregate aggregate(const std::vector<BenchRow>& rows) {
    BenchAggregate a;
    a.samples = rows.size();
    std::vector<double> fit, fo, sec, cg;
    const BenchRow* best = nullptr;
    for (const auto& r : rows) {
        a.valid += r.valid;
        sec.push_back(r.seconds);
        if (r.fitness) {
            ++a.scored;
            fit.push_back(*r.fitness);
        }
        if (r.fom) {
            fo.push_back(*r.fom);
            if (!best || *r.fom > *best->fom) best = &r;
        }
        if (r.cgei) cg.push_back(*r.cgei);
    }
    if (a.samples) a.valid_rate = static_cast<double>(a.valid) / static_cast<double>(a.samples);
    a.fitness = stat_of(fit);
    a.fom = stat_of(fo);
    a.seconds = stat_of(sec);
    a.cgei = stat_of(cg);
    if (best && best->cgei) a.best_fom_cgei = best->cgei;
    return a;
}

/// Mean fitness of the scorable rows at another tolerance.
[[nodiscard]] inline std::optional<double> mean_fitness_at(const std::vector<BenchRow>& rows, double tol,
                                                           FitnessConfig cfg = {}) {
    cfg.tol = tol;
    std::vector<double> v;
    for (const auto& r : rows)
        if (r.fitness) v.push_back(fitness(r.required, r.actual, cfg));
    const auto s = stat_of(v);
    return s ? std::optional<double>(s->mean) : std::nullopt;
}

// -----------------------------------------------------------------------------
// Running
// -----------------------------------------------------------------------------

using Clock = std::function<double()>;

[[nodiscard]] inline Clock steady_seconds() {
    return [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
}

struct BenchOptions {
    SpaceLevel space = SpaceLevel::Low;
    std::size_t samples = 50;
    int interval = 1;
    std::uint64_t seed = 0;
    FitnessConfig fitness{};
    ModelConstants evaluator{};
    std::size_t jobs = 1;
    Clock clock;  // defaults to the steady clock
};

struct BenchReport {
    std::string space;
    std::size_t samples = 0;
    int interval = 1;
    int steps = 0;
    std::uint64_t seed = 0;
    double tol = 0.0;
    std::string config_hash;
    std::vector<BenchRow> rows;
    BenchAggregate summary;
};

/// Scores one generated circuit against its requirement; fills the row.
inline void score_row(BenchRow& row, const CircuitGraph& g, const BenchOptions& opt) {
    row.graph_id = graph_hash(g);
    row.nodes = g.size();
    if (!row.valid) return;
    Evaluation ev;
    try {
        ev = evaluate(expand(g), row.required[idx(Metric::CL)], opt.evaluator);
    } catch (const std::exception& e) {
        row.reason = e.what();
        return;
    }
    row.actual = ev.metrics;
    row.actual[idx(Metric::CL)] = row.required[idx(Metric::CL)];
    row.sim_valid = ev.valid;
    row.reason = ev.reason;
    try {
        row.fitness = fitness(row.required, row.actual, opt.fitness);
        row.fom = fom(row.actual);
        if (row.seconds > 0.0) row.cgei = cgei(*row.fom, row.seconds);
    } catch (const std::invalid_argument& e) {
        row.fitness.reset();
        row.fom.reset();
        row.cgei.reset();
        row.reason = e.what();
    }
}

/// Draws specs from one sampling space, generates, evaluates and scores each.
/// Rows are seeded per index, so results do not depend on jobs.
[[nodiscard]] inline BenchReport run_bench(const BenchOptions& opt, const Denoisers& d, const NoiseSchedule& sch) {
    if (opt.interval < 1 || opt.interval > sch.T) throw std::invalid_argument("interval out of range");
    const Clock clock = opt.clock ? opt.clock : steady_seconds();
    BenchReport rep;
    rep.space = std::string(space_name(opt.space));
    rep.samples = opt.samples;
    rep.interval = opt.interval;
    rep.steps = sch.T;
    rep.seed = opt.seed;
    rep.tol = opt.fitness.tol;
    rep.rows.resize(opt.samples);

    auto run_one = [&](std::size_t i) {
        BenchRow& row = rep.rows[i];
        row.index = i;
        Rng rng(derive_seed(opt.seed, i));
        row.spec = sample_spec(opt.space, rng);
        row.required = denormalize(row.spec);
        const double t0 = clock();
        GenerationResult gen;
        try {
            gen = generate(row.spec, d, sch, opt.interval, rng);
        } catch (const std::exception& e) {
            row.seconds = clock() - t0;
            row.reason = std::string("generation failed: ") + e.what();
            return;
        }
        row.seconds = clock() - t0;
        row.valid = gen.valid;
        row.discrete_calls = gen.discrete_calls;
        row.continuous_calls = gen.continuous_calls;
        if (!gen.valid) row.reason = to_string(gen.report);
        score_row(row, gen.graph, opt);
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, opt.samples));
    if (jobs == 1) {
        for (std::size_t i = 0; i < opt.samples; ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t j = 0; j < jobs; ++j)
            pool.emplace_back([&, j] {
                for (std::size_t i = j; i < opt.samples; i += jobs) run_one(i);
            });
        for (auto& t : pool) t.join();
    }
    rep.summary = aggregate(rep.rows);
    return rep;
}

// -----------------------------------------------------------------------------
// Output
// -----------------------------------------------------------------------------

namespace detail {

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

inline nlohmann::json stat_json(const std::optional<Stat>& s) {
    if (!s) return nullptr;
    return {{"mean", s->mean}, {"std", s->std}, {"max", s->max}};
}

inline std::string opt_csv(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(10);
    os << *v;
    return os.str();
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + '"';
}

}  // namespace detail

[[nodiscard]] inline nlohmann::json to_json(const BenchAggregate& a) {
    return {{"samples", a.samples},
            {"valid", a.valid},
            {"scored", a.scored},
            {"valid_rate", detail::opt_json(a.valid_rate)},
            {"fitness", detail::stat_json(a.fitness)},
            {"fom", detail::stat_json(a.fom)},
            {"seconds", detail::stat_json(a.seconds)},
            {"cgei", detail::stat_json(a.cgei)},
            {"best_fom_cgei", detail::opt_json(a.best_fom_cgei)}};
}

/// Published values for the same space and interval, when there are any.
[[nodiscard]] inline nlohmann::json published_reference(SpaceLevel space, int interval) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& p : kPublishedSpaces)
        if (p.space == space && interval == 1)
            j["space"] = {{"best_fom", p.best_fom},
                          {"fom_mean", p.fom_mean},
                          {"fom_std", p.fom_std},
                          {"fitness_mean", p.fitness_mean},
                          {"fitness_std", p.fitness_std},
                          {"valid_rate", p.valid_rate}};
    for (const auto& p : kPublishedIntervals)
        if (p.interval == interval && space == SpaceLevel::External)
            j["interval"] = {{"fitness_mean", p.fitness_mean},
                             {"fitness_std", p.fitness_std},
                             {"seconds_mean", p.seconds_mean},
                             {"seconds_std", p.seconds_std}};
    return j;
}

[[nodiscard]] inline nlohmann::json to_json(const BenchReport& r) {
    return {{"space", r.space},
            {"samples", r.samples},
            {"interval", r.interval},
            {"steps", r.steps},
            {"seed", r.seed},
            {"tol", r.tol},
            {"config_hash", r.config_hash},
            {"aggregate", to_json(r.summary)},
            {"published", published_reference(space_from_name(r.space), r.interval)}};
}

inline void write_bench_csv(std::ostream& os, const BenchReport& r) {
    os << "index,graph_id,nodes,valid,sim_valid,fitness,fom,seconds,cgei,discrete_calls,continuous_calls";
    for (std::size_t i = 0; i < kMetricCount; ++i) os << ",spec_" << metric_name(static_cast<Metric>(i));
    for (std::size_t i = 0; i < kMetricCount; ++i) os << ",actual_" << metric_name(static_cast<Metric>(i));
    os << ",reason\n";
    os.precision(10);
    for (const auto& row : r.rows) {
        os << row.index << ',' << row.graph_id << ',' << row.nodes << ',' << row.valid << ',' << row.sim_valid << ','
           << detail::opt_csv(row.fitness) << ',' << detail::opt_csv(row.fom) << ',' << row.seconds << ','
           << detail::opt_csv(row.cgei) << ',' << row.discrete_calls << ',' << row.continuous_calls;
        for (double v : row.spec) os << ',' << v;
        for (double v : row.actual) os << ',' << v;
        os << ',' << detail::csv_escape(row.reason) << '\n';
    }
}

/// Mean fitness against tolerance, one line per tol step.
inline void write_tolerance_plot(std::ostream& os, const BenchReport& r, double max_tol = 0.5, int points = 11) {
    os << "# tol mean_fitness\n";
    for (int i = 0; i < points; ++i) {
        const double tol = max_tol * i / std::max(1, points - 1);
        const auto f = mean_fitness_at(r.rows, tol);
        os << tol << ' ' << (f ? std::to_string(*f) : std::string("nan")) << '\n';
    }
}

/// Published CGEI rows plus the measured best and worst rows.
inline void write_cgei_plot(std::ostream& os, const BenchReport& r) {
    os << "# label fom seconds cgei source\n";
    for (const auto& p : kPublishedCgei)
        os << '"' << p.method << ' ' << p.index << "\" " << p.fom << ' ' << p.seconds << ' ' << p.cgei << " published\n";
    const BenchRow *best = nullptr, *worst = nullptr;
    for (const auto& row : r.rows) {
        if (!row.cgei) continue;
        if (!best || *row.fom > *best->fom) best = &row;
        if (!worst || *row.fom < *worst->fom) worst = &row;
    }
    if (worst) os << "\"measured worst\" " << *worst->fom << ' ' << worst->seconds << ' ' << *worst->cgei << " measured\n";
    if (best) os << "\"measured best\" " << *best->fom << ' ' << best->seconds << ' ' << *best->cgei << " measured\n";
}

}  // namespace cktdiffuse
