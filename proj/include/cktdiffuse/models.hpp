#pragma once

// Trainable networks: the message-passing graph denoiser used for both the
// discrete structure and the continuous parameters, and the node-count MLP.

#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autodiff.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "diffusion.hpp"
#include "graph.hpp"

namespace cktdiffuse {

inline constexpr int kEdgeFeatures = static_cast<int>(kMaxPorts * kMaxPorts);
inline constexpr double kEdgeLossWeight = 5.0;
inline constexpr double kSpecFeatureCap = 4.0;

/// Sinusoidal embedding of an integer timestep.
[[nodiscard]] inline std::vector<double> time_embedding(int t, int dims) {
    std::vector<double> e(static_cast<std::size_t>(dims), 0.0);
    const int half = dims / 2;
    for (int i = 0; i < half; ++i) {
        const double w = std::exp(-std::log(10000.0) * i / std::max(1, half));
        e[static_cast<std::size_t>(2 * i)] = std::sin(t * w);
        e[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * w);
    }
    return e;
}

/// Spec entries clipped into [0, cap] so outliers in the dataset stay bounded.
[[nodiscard]] inline std::vector<double> spec_features(const SpecVector& y) {
    std::vector<double> f(kMetricCount);
    for (std::size_t i = 0; i < kMetricCount; ++i)
        f[i] = std::isfinite(y[i]) ? std::clamp(y[i], 0.0, kSpecFeatureCap) : 0.0;
    return f;
}

/// Global conditioning row: spec, time embedding, node count / 10.
[[nodiscard]] inline std::vector<double> condition_row(const SpecVector& y, int t, int time_dims, std::size_t n) {
    auto c = spec_features(y);
    const auto te = time_embedding(t, time_dims);
    c.insert(c.end(), te.begin(), te.end());
    c.push_back(static_cast<double>(n) / 10.0);
    return c;
}

[[nodiscard]] constexpr int condition_dims(int time_dims) { return static_cast<int>(kMetricCount) + time_dims + 1; }

// -----------------------------------------------------------------------------
// Batches
// -----------------------------------------------------------------------------

/// Several graphs as one disjoint union. Edges are all ordered pairs (i, j), i != j.
struct GraphBatch {
    nn::Index graphs = 0;
    std::vector<int> sizes;
    std::vector<int> node_offset;
    std::vector<int> edge_offset;
    std::shared_ptr<std::vector<int>> node_graph = std::make_shared<std::vector<int>>();
    std::shared_ptr<std::vector<int>> edge_graph = std::make_shared<std::vector<int>>();
    std::shared_ptr<std::vector<int>> src = std::make_shared<std::vector<int>>();
    std::shared_ptr<std::vector<int>> dst = std::make_shared<std::vector<int>>();
    std::shared_ptr<std::vector<int>> rev = std::make_shared<std::vector<int>>();
    nn::Mat node_x;
    nn::Mat edge_x;
    nn::Mat cond;

    [[nodiscard]] nn::Index nodes() const { return static_cast<nn::Index>(node_graph->size()); }
    [[nodiscard]] nn::Index edges() const { return static_cast<nn::Index>(src->size()); }
};

class BatchBuilder {
public:
    BatchBuilder(int node_dims, int cond_dims) : node_dims_(node_dims), cond_dims_(cond_dims) {}

    /// node_rows is n x node_dims row-major; edges come from the xi tensor of g.
    void add(const DiscreteGraph& g, const std::vector<double>& node_rows, const std::vector<double>& cond) {
        const int n = static_cast<int>(g.n);
        const int gi = static_cast<int>(b_.sizes.size());
        const int base = static_cast<int>(b_.node_graph->size());
        const int ebase = static_cast<int>(b_.src->size());
        b_.sizes.push_back(n);
        b_.node_offset.push_back(base);
        b_.edge_offset.push_back(ebase);
        for (int i = 0; i < n; ++i) b_.node_graph->push_back(gi);
        node_vals_.insert(node_vals_.end(), node_rows.begin(), node_rows.end());
        cond_vals_.insert(cond_vals_.end(), cond.begin(), cond.end());
        // Pair (i, j) sits at ebase + i*(n-1) + (j < i ? j : j-1).
        auto pair_index = [&](int i, int j) { return ebase + i * (n - 1) + (j < i ? j : j - 1); };
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                b_.src->push_back(base + i);
                b_.dst->push_back(base + j);
                b_.edge_graph->push_back(gi);
                b_.rev->push_back(pair_index(j, i));
                for (std::size_t u = 0; u < kMaxPorts; ++u)
                    for (std::size_t v = 0; v < kMaxPorts; ++v)
                        edge_vals_.push_back(g.edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j), u, v));
            }
    }

    GraphBatch finish() {
        b_.graphs = static_cast<nn::Index>(b_.sizes.size());
        b_.node_x = to_mat(node_vals_, node_dims_);
        b_.edge_x = to_mat(edge_vals_, kEdgeFeatures);
        b_.cond = to_mat(cond_vals_, cond_dims_);
        return std::move(b_);
    }

private:
    static nn::Mat to_mat(const std::vector<double>& v, int cols) {
        const auto rows = static_cast<nn::Index>(v.size()) / cols;
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(v.data(), rows, cols);
    }

    int node_dims_;
    int cond_dims_;
    GraphBatch b_;
    std::vector<double> node_vals_, edge_vals_, cond_vals_;
};

/// Column permutation taking a flattened k x k block to its transpose.
[[nodiscard]] inline std::shared_ptr<const std::vector<int>> transpose_perm() {
    static const auto perm = [] {
        auto p = std::make_shared<std::vector<int>>(kEdgeFeatures);
        for (int u = 0; u < static_cast<int>(kMaxPorts); ++u)
            for (int v = 0; v < static_cast<int>(kMaxPorts); ++v)
                (*p)[static_cast<std::size_t>(u * static_cast<int>(kMaxPorts) + v)] = v * static_cast<int>(kMaxPorts) + u;
        return p;
    }();
    return perm;
}

// -----------------------------------------------------------------------------
// Graph network
// -----------------------------------------------------------------------------

struct GraphNetDims {
    int node_in = 0;
    int edge_in = kEdgeFeatures;
    int cond_in = 0;
    int node_out = 0;
    int edge_out = 0;  // 0 disables the edge head
    int width = 64;
    int rounds = 4;
    bool symmetric_edges = true;
};

/// Weight-only projection.
struct Dense {
    nn::Parameter* w = nullptr;
    static Dense make(nn::ParamStore& ps, const std::string& name, nn::Index in, nn::Index out, Rng& rng) {
        return {&ps.add(name, in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)))};
    }
    nn::Var operator()(nn::Tape& t, nn::Var x) const { return nn::matmul(x, t.param(*w)); }
};

class GraphNet {
public:
    struct Output {
        nn::Var node;
        std::optional<nn::Var> edge;
    };

    GraphNet(nn::ParamStore& ps, const std::string& prefix, GraphNetDims d, Rng& rng) : d_(d) {
        const nn::Index w = d.width;
        cond1_ = nn::Linear::make(ps, prefix + ".cond1", d.cond_in, w, rng);
        cond2_ = nn::Linear::make(ps, prefix + ".cond2", w, w, rng);
        node_in_ = nn::Linear::make(ps, prefix + ".node_in", d.node_in, w, rng);
        edge_in_ = nn::Linear::make(ps, prefix + ".edge_in", d.edge_in, w, rng);
        for (int r = 0; r < d.rounds; ++r) {
            const std::string p = prefix + ".r" + std::to_string(r);
            Round rd;
            rd.src = nn::Linear::make(ps, p + ".src", w, w, rng);
            rd.dst = Dense::make(ps, p + ".dst", w, w, rng);
            rd.edge = Dense::make(ps, p + ".edge", w, w, rng);
            rd.glob_e = Dense::make(ps, p + ".glob_e", w, w, rng);
            rd.edge_out = nn::Linear::make(ps, p + ".edge_out", w, w, rng);
            rd.self = nn::Linear::make(ps, p + ".self", w, w, rng);
            rd.agg = Dense::make(ps, p + ".agg", w, w, rng);
            rd.glob_n = Dense::make(ps, p + ".glob_n", w, w, rng);
            rd.node_out = nn::Linear::make(ps, p + ".node_out", w, w, rng);
            rounds_.push_back(rd);
        }
        node_head_ = nn::Linear::make(ps, prefix + ".node_head", w, d.node_out, rng, true);
        if (d.edge_out > 0) edge_head_ = nn::Linear::make(ps, prefix + ".edge_head", w, d.edge_out, rng, true);
    }

    [[nodiscard]] const GraphNetDims& dims() const { return d_; }

    Output forward(nn::Tape& t, const GraphBatch& b) const {
        using namespace nn;
        const Var g = cond2_(t, silu(cond1_(t, t.constant(b.cond))));
        Var h = add(node_in_(t, t.constant(b.node_x)), gather_rows(g, b.node_graph));
        Var e = edge_in_(t, t.constant(b.edge_x));
        for (const auto& rd : rounds_) {
            Var pre = add(gather_rows(rd.src(t, h), b.src), gather_rows(rd.dst(t, h), b.dst));
            pre = add(pre, rd.edge(t, e));
            pre = add(pre, gather_rows(rd.glob_e(t, g), b.edge_graph));
            e = add(e, rd.edge_out(t, silu(pre)));
            const Var agg = segment_mean(e, b.src, b.nodes());
            Var u = add(rd.self(t, h), rd.agg(t, agg));
            u = add(u, gather_rows(rd.glob_n(t, g), b.node_graph));
            h = add(h, rd.node_out(t, silu(u)));
        }
        Output out{node_head_(t, h), std::nullopt};
        if (d_.edge_out > 0) {
            Var raw = edge_head_(t, e);
            if (d_.symmetric_edges) raw = scale(add(raw, permute_cols(gather_rows(raw, b.rev), transpose_perm())), 0.5);
            out.edge = raw;
        }
        return out;
    }

private:
    struct Round {
        nn::Linear src;
        Dense dst, edge, glob_e;
        nn::Linear edge_out;
        nn::Linear self;
        Dense agg, glob_n;
        nn::Linear node_out;
    };

    GraphNetDims d_;
    nn::Linear cond1_, cond2_, node_in_, edge_in_;
    std::vector<Round> rounds_;
    nn::Linear node_head_, edge_head_;
};

/// Spec -> logits over node counts min_nodes..max_nodes.
class CountPredictor {
public:
    CountPredictor(nn::ParamStore& ps, int hidden, int classes, Rng& rng)
        : l1_(nn::Linear::make(ps, "count.l1", static_cast<nn::Index>(kMetricCount), hidden, rng)),
          l2_(nn::Linear::make(ps, "count.l2", hidden, classes, rng, true)) {}

    nn::Var logits(nn::Tape& t, const nn::Mat& specs) const { return l2_(t, nn::silu(l1_(t, t.constant(specs)))); }

private:
    nn::Linear l1_, l2_;
};

// -----------------------------------------------------------------------------
// Bundle
// -----------------------------------------------------------------------------

/// Node input row of the structure denoiser: kind one-hot.
inline void kind_row(const DiscreteGraph& g, std::size_t i, std::vector<double>& out) {
    for (std::size_t c = 0; c < kKindCount; ++c) out.push_back(g.node(i, c));
}

/// Used parameter slots for each node of a structure (1 = used).
[[nodiscard]] inline nn::Mat param_mask(const DiscreteGraph& g) {
    nn::Mat m = nn::Mat::Zero(static_cast<nn::Index>(g.n), static_cast<nn::Index>(kParamCount));
    for (std::size_t i = 0; i < g.n; ++i) {
        const auto used = param_ranges(kind_from_index(g.kind_of(i))).size();
        for (std::size_t p = 0; p < used; ++p) m(static_cast<nn::Index>(i), static_cast<nn::Index>(p)) = 1.0;
    }
    return m;
}

class HashMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelBundle {
    RunConfig config;
    std::string hash;
    NoiseSchedule schedule;
    EdgeNoise edge_noise = EdgeNoise::Binary;
    nn::ParamStore count_params, discrete_params, continuous_params;
    std::unique_ptr<CountPredictor> count;
    std::unique_ptr<GraphNet> discrete;
    std::unique_ptr<GraphNet> continuous;

    explicit ModelBundle(const RunConfig& cfg)
        : config(cfg),
          hash(model_hash(cfg)),
          schedule(cosine_schedule(cfg.schedule.T, cfg.schedule.s, cfg.schedule.clip)),
          edge_noise(edge_noise_from_name(cfg.schedule.edge_noise)) {
        const auto& m = cfg.model;
        if (m.continuous_output != "clean" && m.continuous_output != "eps")
            throw std::invalid_argument("unknown continuous output: " + m.continuous_output);
        if (m.min_nodes < 1 || m.max_nodes < m.min_nodes) throw std::invalid_argument("bad node count range");
        Rng rng(derive_seed(cfg.seed, 0x6d6f64656cULL));
        count = std::make_unique<CountPredictor>(count_params, m.count_hidden, count_classes(), rng);
        const int cond = condition_dims(m.time_dims);
        discrete = std::make_unique<GraphNet>(
            discrete_params, "disc",
            GraphNetDims{static_cast<int>(kKindCount), kEdgeFeatures, cond, static_cast<int>(kKindCount), kEdgeFeatures,
                         m.width, m.rounds, true},
            rng);
        continuous = std::make_unique<GraphNet>(
            continuous_params, "cont",
            GraphNetDims{static_cast<int>(kKindCount + kParamCount), kEdgeFeatures, cond, static_cast<int>(kParamCount), 0,
                         m.width, m.rounds, true},
            rng);
    }

    [[nodiscard]] int count_classes() const { return config.model.max_nodes - config.model.min_nodes + 1; }
    [[nodiscard]] bool predicts_clean() const { return config.model.continuous_output == "clean"; }
};

// -----------------------------------------------------------------------------
// Batched inputs
// -----------------------------------------------------------------------------

inline void add_discrete_input(BatchBuilder& bb, const DiscreteGraph& gt, const SpecVector& y, int t, int time_dims) {
    std::vector<double> rows;
    rows.reserve(gt.n * kKindCount);
    for (std::size_t i = 0; i < gt.n; ++i) kind_row(gt, i, rows);
    bb.add(gt, rows, condition_row(y, t, time_dims, gt.n));
}

inline void add_continuous_input(BatchBuilder& bb, const DiscreteGraph& structure, const nn::Mat& vt, const SpecVector& y,
                                 int t, int time_dims) {
    std::vector<double> rows;
    rows.reserve(structure.n * (kKindCount + kParamCount));
    for (std::size_t i = 0; i < structure.n; ++i) {
        kind_row(structure, i, rows);
        for (std::size_t p = 0; p < kParamCount; ++p) rows.push_back(vt(static_cast<nn::Index>(i), static_cast<nn::Index>(p)));
    }
    bb.add(structure, rows, condition_row(y, t, time_dims, structure.n));
}

/// Noise estimate for stacked parameter rows. vt and the per-row timesteps
/// follow the batch order.
[[nodiscard]] inline nn::Var continuous_eps(nn::Tape& tape, const ModelBundle& mb, const GraphBatch& batch,
                                            const nn::Mat& vt, const std::vector<int>& row_t) {
    const nn::Var out = mb.continuous->forward(tape, batch).node;
    if (!mb.predicts_clean()) return out;
    // eps = (vt - sqrt(ab) v0) / sqrt(1 - ab)
    nn::Mat a(vt.rows(), vt.cols()), b(vt.rows(), vt.cols());
    for (nn::Index r = 0; r < vt.rows(); ++r) {
        const double ab = mb.schedule.ab(row_t[static_cast<std::size_t>(r)]);
        const double s = std::sqrt(1.0 - ab);
        a.row(r).setConstant(-std::sqrt(ab) / s);
        b.row(r) = vt.row(r) / s;
    }
    return nn::add(nn::mul(out, tape.constant(std::move(a))), tape.constant(std::move(b)));
}

// -----------------------------------------------------------------------------
// Inference
// -----------------------------------------------------------------------------

/// Clean-graph probabilities from a noisy graph.
[[nodiscard]] inline DiscreteProbs predict_discrete(const ModelBundle& mb, const DiscreteGraph& gt, const SpecVector& y,
                                                    int t) {
    BatchBuilder bb(static_cast<int>(kKindCount), condition_dims(mb.config.model.time_dims));
    add_discrete_input(bb, gt, y, t, mb.config.model.time_dims);
    const auto batch = bb.finish();
    nn::Tape tape;
    const auto out = mb.discrete->forward(tape, batch);
    DiscreteProbs p(gt.n);
    const nn::Mat& z = out.node.value();
    for (std::size_t i = 0; i < gt.n; ++i) {
        const auto r = static_cast<nn::Index>(i);
        const double m = z.row(r).maxCoeff();
        double s = 0.0;
        for (std::size_t c = 0; c < kKindCount; ++c) s += (p.node(i, c) = std::exp(z(r, static_cast<nn::Index>(c)) - m));
        for (std::size_t c = 0; c < kKindCount; ++c) p.node(i, c) /= s;
    }
    const nn::Mat& ze = out.edge->value();
    const int n = static_cast<int>(gt.n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const nn::Index row = i * (n - 1) + (j < i ? j : j - 1);
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v)
                    p.edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j), u, v) =
                        1.0 / (1.0 + std::exp(-ze(row, static_cast<nn::Index>(u * kMaxPorts + v))));
        }
    return p;
}

/// Predicted noise for the parameter matrix of a fixed structure.
[[nodiscard]] inline nn::Mat predict_eps(const ModelBundle& mb, const DiscreteGraph& structure, const nn::Mat& vt,
                                         const SpecVector& y, int t) {
    BatchBuilder bb(static_cast<int>(kKindCount + kParamCount), condition_dims(mb.config.model.time_dims));
    add_continuous_input(bb, structure, vt, y, t, mb.config.model.time_dims);
    const auto batch = bb.finish();
    nn::Tape tape;
    return continuous_eps(tape, mb, batch, vt, std::vector<int>(structure.n, t)).value();
}

/// Probabilities over node counts min_nodes..max_nodes.
[[nodiscard]] inline std::vector<double> predict_count(const ModelBundle& mb, const SpecVector& y) {
    const auto f = spec_features(y);
    nn::Mat x(1, static_cast<nn::Index>(kMetricCount));
    for (std::size_t i = 0; i < kMetricCount; ++i) x(0, static_cast<nn::Index>(i)) = f[i];
    nn::Tape tape;
    const nn::Mat z = mb.count->logits(tape, x).value();
    std::vector<double> p(static_cast<std::size_t>(z.cols()));
    const double m = z.maxCoeff();
    double s = 0.0;
    for (nn::Index c = 0; c < z.cols(); ++c) s += (p[static_cast<std::size_t>(c)] = std::exp(z(0, c) - m));
    for (double& v : p) v /= s;
    return p;
}

// -----------------------------------------------------------------------------
// Checkpoints
// -----------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointFormat = "cktdiffuse-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const ModelBundle& mb, const std::string& path) {
    const nlohmann::json j{{"format", kCheckpointFormat},
                           {"version", kCheckpointVersion},
                           {"config_hash", mb.hash},
                           {"config", mb.config},
                           {"count", mb.count_params.to_json()},
                           {"discrete", mb.discrete_params.to_json()},
                           {"continuous", mb.continuous_params.to_json()}};
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DatasetIoError("cannot write " + tmp);
        out << j.dump() << '\n';
        if (!out) throw DatasetIoError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

/// Loads a checkpoint; a non-empty expected hash must match the stored one.
[[nodiscard]] inline std::unique_ptr<ModelBundle> load_checkpoint(const std::string& path,
                                                                  const std::string& expected_hash = "") {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetIoError("cannot open checkpoint " + path);
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion)
        throw std::runtime_error("not a checkpoint: " + path);
    const auto stored = j.at("config_hash").get<std::string>();
    if (!expected_hash.empty() && stored != expected_hash)
        throw HashMismatchError("checkpoint " + path + " has config hash " + stored + ", expected " + expected_hash);
    auto mb = std::make_unique<ModelBundle>(j.at("config").get<RunConfig>());
    if (mb->hash != stored) throw HashMismatchError("checkpoint " + path + " config does not match its hash");
    mb->count_params.load_json(j.at("count"));
    mb->discrete_params.load_json(j.at("discrete"));
    mb->continuous_params.load_json(j.at("continuous"));
    return mb;
}

}  // namespace cktdiffuse
