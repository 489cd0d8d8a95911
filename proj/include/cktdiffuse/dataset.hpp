#pragma once

// Synthetic structure/performance pairs, metric normalization and the
// spec sampling spaces.

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "config.hpp"
#include "graph.hpp"
#include "perf_model.hpp"
#include "random.hpp"
#include "templates.hpp"

namespace cktdiffuse {

using SpecVector = MetricsVector;

/// Division constants per metric, in metric order.
inline constexpr MetricsVector kNormalization{
    1e-3,   // Pdiss, W
    100.0,  // GainDC, dB
    1e7,    // GBW, Hz
    180.0,  // PM, deg
    1e7,    // SRp, V/s
    1e7,    // SRn
    1.2,    // VOL, V
    1.2,    // VOH
    100.0,  // CMRR, dB
    100.0,  // PSRR
    1e-6,   // Noise1kHz, V/sqrt(Hz)
    1e-7,   // Noise1GHz
    1e-11,  // CL, F
};

[[nodiscard]] inline SpecVector normalize(const MetricsVector& v) {
    SpecVector y{};
    for (std::size_t i = 0; i < kMetricCount; ++i) y[i] = v[i] / kNormalization[i];
    return y;
}

[[nodiscard]] inline MetricsVector denormalize(const SpecVector& y) {
    MetricsVector v{};
    for (std::size_t i = 0; i < kMetricCount; ++i) v[i] = y[i] * kNormalization[i];
    return v;
}

// -----------------------------------------------------------------------------
// Sampling spaces
// -----------------------------------------------------------------------------

enum class SpaceLevel : std::uint8_t { External, High, Medium, Low };

inline constexpr std::array<SpaceLevel, 4> kSpaceLevels{SpaceLevel::External, SpaceLevel::High, SpaceLevel::Medium,
                                                        SpaceLevel::Low};

[[nodiscard]] constexpr std::string_view space_name(SpaceLevel s) {
    constexpr std::array<std::string_view, 4> names{"external", "high", "medium", "low"};
    return names[static_cast<std::size_t>(s)];
}

[[nodiscard]] inline SpaceLevel space_from_name(std::string_view name) {
    for (SpaceLevel s : kSpaceLevels)
        if (space_name(s) == name) return s;
    throw std::invalid_argument("unknown sampling space: " + std::string(name));
}

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

using SpaceTable = std::array<Interval, kMetricCount>;

[[nodiscard]] inline const SpaceTable& sampling_table(SpaceLevel s) {
    // Rows in metric order; CMRR shares PSRR's row and Noise1GHz shares Noise1kHz's.
    static const std::array<SpaceTable, 4> tables{{
        {{{0.03, 0.20}, {0.8, 1.0}, {1.0, 3.0}, {0.31, 0.33}, {0.35, 0.5}, {0.35, 0.5}, {0.1, 0.2}, {0.8, 0.9},
          {0.6, 0.7}, {0.6, 0.7}, {0.5, 0.67}, {0.5, 0.67}, {1.0, 2.0}}},
        {{{0.05, 0.35}, {0.6, 0.8}, {0.7, 1.0}, {0.31, 0.33}, {0.35, 0.5}, {0.35, 0.5}, {0.1, 0.2}, {0.8, 0.9},
          {0.53, 0.7}, {0.53, 0.7}, {0.5, 0.67}, {0.5, 0.67}, {0.7, 1.0}}},
        {{{0.35, 0.65}, {0.53, 0.67}, {0.4, 0.7}, {0.28, 0.31}, {0.2, 0.35}, {0.2, 0.35}, {0.2, 0.35}, {0.65, 0.8},
          {0.37, 0.53}, {0.37, 0.53}, {0.67, 0.83}, {0.67, 0.83}, {0.4, 0.7}}},
        {{{0.65, 1.0}, {0.4, 0.53}, {0.1, 0.4}, {0.25, 0.28}, {0.1, 0.2}, {0.1, 0.2}, {0.35, 0.5}, {0.5, 0.65},
          {0.2, 0.37}, {0.2, 0.37}, {0.83, 1.0}, {0.83, 1.0}, {0.1, 0.4}}},
    }};
    return tables[static_cast<std::size_t>(s)];
}

[[nodiscard]] inline SpecVector sample_spec(SpaceLevel s, Rng& rng) {
    SpecVector y{};
    const auto& table = sampling_table(s);
    for (std::size_t i = 0; i < kMetricCount; ++i) y[i] = rng.uniform(table[i].lo, table[i].hi);
    return y;
}

// -----------------------------------------------------------------------------
// Records
// -----------------------------------------------------------------------------

struct DatasetRecord {
    std::uint64_t id = 0;
    std::string template_id;
    CircuitGraph graph;
    MetricsVector metrics_raw{};
    SpecVector metrics_norm{};
    bool valid = false;
    std::string reason;
    std::string config_hash;

    bool operator==(const DatasetRecord&) const = default;
};

[[nodiscard]] inline nlohmann::json to_json(const DatasetRecord& r) {
    return {{"id", r.id},
            {"template", r.template_id},
            {"graph", to_json(r.graph)},
            {"metrics_raw", r.metrics_raw},
            {"metrics_norm", r.metrics_norm},
            {"valid", r.valid},
            {"reason", r.reason},
            {"config_hash", r.config_hash}};
}

[[nodiscard]] inline DatasetRecord record_from_json(const nlohmann::json& j) {
    DatasetRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.template_id = j.at("template").get<std::string>();
    r.graph = graph_from_json(j.at("graph"));
    r.metrics_raw = j.at("metrics_raw").get<MetricsVector>();
    r.metrics_norm = j.at("metrics_norm").get<SpecVector>();
    r.valid = j.at("valid").get<bool>();
    r.reason = j.value("reason", "");
    r.config_hash = j.value("config_hash", "");
    return r;
}

/// One record: structure, uniform parameters in [0,1] and a load, evaluated.
[[nodiscard]] inline DatasetRecord make_record(std::uint64_t index, std::uint64_t seed,
                                               const std::vector<TemplateChoice>& choices, const DatasetConfig& cfg) {
    Rng rng(derive_seed(seed, index));
    auto s = sample_structure(rng, choices);
    for (std::size_t i = 0; i < s.graph.size(); ++i) {
        auto& node = s.graph.node(i);
        node.params.fill(0.0);
        for (std::size_t p = 0; p < param_ranges(node.kind).size(); ++p) node.params[p] = rng.uniform();
    }
    const double cl = rng.uniform(cfg.cl_min, cfg.cl_max) * kNormalization[idx(Metric::CL)];

    DatasetRecord r;
    r.id = index;
    r.template_id = std::move(s.template_id);
    const auto ev = evaluate(expand(s.graph), cl, cfg.evaluator);
    r.graph = std::move(s.graph);
    r.metrics_raw = ev.metrics;
    r.metrics_raw[idx(Metric::CL)] = cl;
    r.metrics_norm = normalize(r.metrics_raw);
    r.valid = ev.valid;
    r.reason = ev.reason;
    return r;
}

// -----------------------------------------------------------------------------
// Files
// -----------------------------------------------------------------------------

class DatasetIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

[[nodiscard]] inline bool is_gzip_path(const std::string& path) {
    return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

/// Line sink over a plain or gzip file.
class LineWriter {
public:
    LineWriter(const std::string& path, bool gz) : gz_(gz) {
        if (gz_) {
            gzf_ = gzopen(path.c_str(), "wb6");
            if (!gzf_) throw DatasetIoError("cannot open " + path);
        } else {
            out_.open(path, std::ios::binary);
            if (!out_) throw DatasetIoError("cannot open " + path);
        }
    }
    LineWriter(const LineWriter&) = delete;
    LineWriter& operator=(const LineWriter&) = delete;
    ~LineWriter() {
        if (gzf_) gzclose(gzf_);
    }

    void write(const std::string& line) {
        if (gz_) {
            const int n = gzwrite(gzf_, line.data(), static_cast<unsigned>(line.size()));
            if (n != static_cast<int>(line.size()) || gzputc(gzf_, '\n') != '\n') throw DatasetIoError("gzip write failed");
        } else {
            out_ << line << '\n';
            if (!out_) throw DatasetIoError("write failed");
        }
    }

    void close() {
        if (gz_) {
            const int rc = gzclose(gzf_);
            gzf_ = nullptr;
            if (rc != Z_OK) throw DatasetIoError("gzip close failed");
        } else {
            out_.close();
            if (!out_) throw DatasetIoError("close failed");
        }
    }

private:
    bool gz_;
    gzFile gzf_ = nullptr;
    std::ofstream out_;
};

/// Reads plain or gzip JSON Lines (zlib passes plain files through).
[[nodiscard]] inline std::vector<std::string> read_lines(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DatasetIoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string cur;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) {
        for (int i = 0; i < n; ++i) {
            if (buf[i] == '\n') {
                lines.push_back(std::move(cur));
                cur.clear();
            } else {
                cur.push_back(buf[i]);
            }
        }
    }
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw DatasetIoError("read failed: " + path);
    if (!cur.empty()) lines.push_back(std::move(cur));
    return lines;
}

[[nodiscard]] inline std::vector<DatasetRecord> load_dataset(const std::string& path) {
    std::vector<DatasetRecord> out;
    std::size_t lineno = 0;
    for (const auto& line : read_lines(path)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw DatasetIoError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

[[nodiscard]] inline std::vector<DatasetRecord> valid_records(std::vector<DatasetRecord> all) {
    std::erase_if(all, [](const DatasetRecord& r) { return !r.valid; });
    return all;
}

struct DatasetSummary {
    std::size_t attempted = 0;
    std::size_t valid = 0;
    std::map<std::size_t, std::size_t> node_histogram;
    std::map<std::string, std::size_t> template_counts;
    std::map<std::string, std::size_t> invalid_reasons;
    std::string config_hash;

    [[nodiscard]] double valid_fraction() const {
        return attempted == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(attempted);
    }

    void add(const DatasetRecord& r) {
        ++attempted;
        ++node_histogram[r.graph.size()];
        ++template_counts[r.template_id];
        if (r.valid) {
            ++valid;
        } else {
            // Device names vary; keep the condition only.
            const auto pos = r.reason.find(" not in saturation");
            ++invalid_reasons[pos == std::string::npos ? r.reason : "not in saturation"];
        }
    }
};

[[nodiscard]] inline nlohmann::json to_json(const DatasetSummary& s) {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [n, c] : s.node_histogram) hist[std::to_string(n)] = c;
    return {{"attempted", s.attempted},     {"valid", s.valid},
            {"valid_fraction", s.valid_fraction()}, {"node_histogram", hist},
            {"templates", s.template_counts}, {"invalid_reasons", s.invalid_reasons},
            {"config_hash", s.config_hash}};
}

/// Writes `count` records to `path` (gzip when it ends in .gz). Records are
/// computed in parallel blocks and written in index order, so output bytes
/// depend only on the seed and config. The file appears atomically.
inline DatasetSummary build_dataset(std::size_t count, std::uint64_t seed, const DatasetConfig& cfg,
                                    const std::string& path, unsigned jobs = 1, const std::string& config_hash = "") {
    if (count == 0) throw std::invalid_argument("dataset count must be at least 1");
    jobs = std::max(1u, jobs);
    const auto choices = parse_template_set(cfg.templates);
    const std::string tmp = path + ".tmp";

    DatasetSummary summary;
    summary.config_hash = config_hash;
    try {
        LineWriter out(tmp, is_gzip_path(path));
        const std::size_t block = 64 * jobs;
        std::vector<DatasetRecord> recs(block);
        for (std::size_t base = 0; base < count; base += block) {
            const std::size_t m = std::min(block, count - base);
            std::vector<std::exception_ptr> errors(jobs);
            auto work = [&](unsigned w) {
                try {
                    for (std::size_t i = w; i < m; i += jobs) {
                        recs[i] = make_record(base + i, seed, choices, cfg);
                        recs[i].config_hash = config_hash;
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            };
            std::vector<std::thread> pool;
            for (unsigned w = 1; w < jobs; ++w) pool.emplace_back(work, w);
            work(0);
            for (auto& t : pool) t.join();
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);
            for (std::size_t i = 0; i < m; ++i) {
                out.write(to_json(recs[i]).dump());
                summary.add(recs[i]);
            }
        }
        out.close();
        std::filesystem::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
    return summary;
}

}  // namespace cktdiffuse
