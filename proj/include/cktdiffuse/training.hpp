#pragma once

// Training loops for the three networks. Each step draws a batch of examples
// and one timestep per example; everything runs from the caller's Rng.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "models.hpp"

namespace cktdiffuse {

/// A dataset record in tensor form.
struct TrainingExample {
    DiscreteGraph structure;
    nn::Mat params;  // n x b
    nn::Mat mask;    // used slots
    SpecVector spec{};
};

[[nodiscard]] inline TrainingExample make_example(const CircuitGraph& g, const SpecVector& spec) {
    TrainingExample ex;
    ex.structure = to_discrete_tensor(g);
    ex.params = nn::Mat::Zero(static_cast<nn::Index>(g.size()), static_cast<nn::Index>(kParamCount));
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t p = 0; p < kParamCount; ++p)
            ex.params(static_cast<nn::Index>(i), static_cast<nn::Index>(p)) = g.node(i).params[p];
    ex.mask = param_mask(ex.structure);
    ex.spec = spec;
    return ex;
}

/// Valid records whose node count fits the model.
[[nodiscard]] inline std::vector<TrainingExample> training_examples(const std::vector<DatasetRecord>& records,
                                                                    const ModelConfig& m) {
    std::vector<TrainingExample> out;
    for (const auto& r : records) {
        if (!r.valid) continue;
        const auto n = static_cast<int>(r.graph.size());
        if (n < m.min_nodes || n > m.max_nodes) continue;
        out.push_back(make_example(r.graph, r.metrics_norm));
    }
    return out;
}

using StepCallback = std::function<void(int step, double loss)>;

namespace detail {

inline std::vector<std::size_t> draw_batch(std::size_t size, int batch, Rng& rng) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
    for (auto& i : idx) i = rng.index(size);
    return idx;
}

inline nn::Adam make_adam(const TrainConfig& tc) {
    nn::Adam opt;
    opt.lr = tc.lr;
    opt.clip = tc.clip_norm;
    return opt;
}

inline void set_lr(nn::Adam& opt, const TrainConfig& tc, int step, int steps) {
    opt.lr = tc.cosine_decay ? 0.5 * tc.lr * (1.0 + std::cos(std::numbers::pi * step / std::max(1, steps))) : tc.lr;
}

inline double finish_step(nn::Tape& tape, nn::Var loss, nn::ParamStore& ps, nn::Adam& opt, int step) {
    const double l = loss.value()(0, 0);
    if (!std::isfinite(l)) throw std::runtime_error("non-finite loss at step " + std::to_string(step));
    ps.zero_grad();
    tape.backward(loss);
    opt.update(ps);
    return l;
}

inline void check_examples(const std::vector<TrainingExample>& ex, int steps) {
    if (ex.empty()) throw std::invalid_argument("no training examples");
    if (steps < 0) throw std::invalid_argument("negative step count");
}

}  // namespace detail

/// Structure loss for one batch: node cross entropy plus weighted edge BCE.
[[nodiscard]] inline nn::Var discrete_loss(nn::Tape& tape, const ModelBundle& mb, const std::vector<DiscreteGraph>& noisy,
                                           const std::vector<const TrainingExample*>& clean, const std::vector<int>& ts) {
    BatchBuilder bb(static_cast<int>(kKindCount), condition_dims(mb.config.model.time_dims));
    std::vector<int> kinds;
    std::vector<double> edge_targets;
    for (std::size_t b = 0; b < noisy.size(); ++b) {
        const auto& g0 = clean[b]->structure;
        add_discrete_input(bb, noisy[b], clean[b]->spec, ts[b], mb.config.model.time_dims);
        for (std::size_t i = 0; i < g0.n; ++i) kinds.push_back(static_cast<int>(g0.kind_of(i)));
        for (std::size_t i = 0; i < g0.n; ++i)
            for (std::size_t j = 0; j < g0.n; ++j) {
                if (i == j) continue;
                for (std::size_t u = 0; u < kMaxPorts; ++u)
                    for (std::size_t v = 0; v < kMaxPorts; ++v) edge_targets.push_back(g0.edge(i, j, u, v));
            }
    }
    const auto batch = bb.finish();
    const auto out = mb.discrete->forward(tape, batch);
    nn::Var loss = nn::cross_entropy(out.node, std::move(kinds));
    if (batch.edges() > 0) {
        const nn::Mat et = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            edge_targets.data(), batch.edges(), kEdgeFeatures);
        loss = nn::add(loss, nn::scale(nn::bce_with_logits(*out.edge, et), kEdgeLossWeight));
    }
    return loss;
}

/// Trains the structure denoiser; returns the loss per step.
inline std::vector<double> train_discrete(ModelBundle& mb, const std::vector<TrainingExample>& examples, int steps,
                                          Rng& rng, const StepCallback& on_step = {}) {
    detail::check_examples(examples, steps);
    auto opt = detail::make_adam(mb.config.train);
    std::vector<double> trace;
    for (int step = 0; step < steps; ++step) {
        std::vector<DiscreteGraph> noisy;
        std::vector<const TrainingExample*> clean;
        std::vector<int> ts;
        for (auto i : detail::draw_batch(examples.size(), mb.config.train.batch, rng)) {
            const int t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(mb.schedule.T)));
            clean.push_back(&examples[i]);
            ts.push_back(t);
            noisy.push_back(forward_discrete(examples[i].structure, t, mb.schedule, rng, mb.edge_noise));
        }
        detail::set_lr(opt, mb.config.train, step, steps);
        nn::Tape tape;
        const auto loss = discrete_loss(tape, mb, noisy, clean, ts);
        trace.push_back(detail::finish_step(tape, loss, mb.discrete_params, opt, step));
        if (on_step) on_step(step, trace.back());
    }
    return trace;
}

/// Masked noise-prediction loss for one batch.
[[nodiscard]] inline nn::Var continuous_loss(nn::Tape& tape, const ModelBundle& mb,
                                             const std::vector<const TrainingExample*>& clean,
                                             const std::vector<NoisedParams>& noised, const std::vector<int>& ts) {
    BatchBuilder bb(static_cast<int>(kKindCount + kParamCount), condition_dims(mb.config.model.time_dims));
    nn::Index rows = 0;
    for (const auto* ex : clean) rows += ex->params.rows();
    const auto cols = static_cast<nn::Index>(kParamCount);
    nn::Mat target(rows, cols), mask(rows, cols), vt(rows, cols);
    std::vector<int> row_t;
    nn::Index r = 0;
    for (std::size_t b = 0; b < clean.size(); ++b) {
        add_continuous_input(bb, clean[b]->structure, noised[b].vt, clean[b]->spec, ts[b], mb.config.model.time_dims);
        const auto n = clean[b]->params.rows();
        target.middleRows(r, n) = noised[b].eps;
        mask.middleRows(r, n) = clean[b]->mask;
        vt.middleRows(r, n) = noised[b].vt;
        row_t.insert(row_t.end(), static_cast<std::size_t>(n), ts[b]);
        r += n;
    }
    const auto batch = bb.finish();
    return nn::masked_mse(continuous_eps(tape, mb, batch, vt, row_t), std::move(target), std::move(mask));
}

/// Trains the parameter denoiser on the clean structures; returns the loss per step.
inline std::vector<double> train_continuous(ModelBundle& mb, const std::vector<TrainingExample>& examples, int steps,
                                            Rng& rng, const StepCallback& on_step = {}) {
    detail::check_examples(examples, steps);
    auto opt = detail::make_adam(mb.config.train);
    std::vector<double> trace;
    for (int step = 0; step < steps; ++step) {
        std::vector<const TrainingExample*> clean;
        std::vector<NoisedParams> noised;
        std::vector<int> ts;
        for (auto i : detail::draw_batch(examples.size(), mb.config.train.batch, rng)) {
            const int t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(mb.schedule.T)));
            clean.push_back(&examples[i]);
            ts.push_back(t);
            noised.push_back(forward_continuous(examples[i].params, t, mb.schedule, rng));
        }
        detail::set_lr(opt, mb.config.train, step, steps);
        nn::Tape tape;
        const auto loss = continuous_loss(tape, mb, clean, noised, ts);
        trace.push_back(detail::finish_step(tape, loss, mb.continuous_params, opt, step));
        if (on_step) on_step(step, trace.back());
    }
    return trace;
}

[[nodiscard]] inline nn::Mat spec_matrix(const std::vector<const TrainingExample*>& ex) {
    nn::Mat x(static_cast<nn::Index>(ex.size()), static_cast<nn::Index>(kMetricCount));
    for (std::size_t b = 0; b < ex.size(); ++b) {
        const auto f = spec_features(ex[b]->spec);
        for (std::size_t i = 0; i < kMetricCount; ++i) x(static_cast<nn::Index>(b), static_cast<nn::Index>(i)) = f[i];
    }
    return x;
}

/// Trains the node-count classifier; returns the loss per step.
inline std::vector<double> train_count(ModelBundle& mb, const std::vector<TrainingExample>& examples, int steps, Rng& rng,
                                       const StepCallback& on_step = {}) {
    detail::check_examples(examples, steps);
    auto opt = detail::make_adam(mb.config.train);
    std::vector<double> trace;
    for (int step = 0; step < steps; ++step) {
        std::vector<const TrainingExample*> batch;
        std::vector<int> labels;
        for (auto i : detail::draw_batch(examples.size(), mb.config.train.batch, rng)) {
            batch.push_back(&examples[i]);
            labels.push_back(static_cast<int>(examples[i].structure.n) - mb.config.model.min_nodes);
        }
        detail::set_lr(opt, mb.config.train, step, steps);
        nn::Tape tape;
        const auto loss = nn::cross_entropy(mb.count->logits(tape, spec_matrix(batch)), std::move(labels));
        trace.push_back(detail::finish_step(tape, loss, mb.count_params, opt, step));
        if (on_step) on_step(step, trace.back());
    }
    return trace;
}

/// Top-1 accuracy of the count predictor.
[[nodiscard]] inline double count_accuracy(const ModelBundle& mb, const std::vector<TrainingExample>& ex) {
    if (ex.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& e : ex) {
        const auto p = predict_count(mb, e.spec);
        const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        hits += best + mb.config.model.min_nodes == static_cast<int>(e.structure.n);
    }
    return static_cast<double>(hits) / static_cast<double>(ex.size());
}

/// Runs all three loops with the step counts from the config.
inline void train_all(ModelBundle& mb, const std::vector<TrainingExample>& examples, Rng& rng,
                      const std::function<void(std::string_view stage, int step, double loss)>& on_step = {}) {
    auto relay = [&](std::string_view stage) -> StepCallback {
        if (!on_step) return {};
        return [&on_step, stage](int s, double l) { on_step(stage, s, l); };
    };
    train_count(mb, examples, mb.config.train.count_steps, rng, relay("count"));
    train_discrete(mb, examples, mb.config.train.discrete_steps, rng, relay("discrete"));
    train_continuous(mb, examples, mb.config.train.continuous_steps, rng, relay("continuous"));
}

// -----------------------------------------------------------------------------
// Diagnostics
// -----------------------------------------------------------------------------

struct StructureAccuracy {
    double nodes = 0.0;  // argmax kind matches
    double edges = 0.0;  // thresholded entries match
    double graphs = 0.0; // whole graph matches
};

/// Denoising accuracy of the structure model at a fixed timestep.
[[nodiscard]] inline StructureAccuracy structure_accuracy(const ModelBundle& mb, const std::vector<TrainingExample>& ex,
                                                          int t, Rng& rng) {
    std::size_t nodes = 0, node_hits = 0, edges = 0, edge_hits = 0, graph_hits = 0;
    for (const auto& e : ex) {
        const auto gt = forward_discrete(e.structure, t, mb.schedule, rng, mb.edge_noise);
        const auto p = predict_discrete(mb, gt, e.spec, t);
        bool all = true;
        for (std::size_t i = 0; i < e.structure.n; ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < kKindCount; ++c)
                if (p.node(i, c) > p.node(i, best)) best = c;
            const bool hit = best == e.structure.kind_of(i);
            node_hits += hit;
            all &= hit;
            ++nodes;
            for (std::size_t j = 0; j < e.structure.n; ++j) {
                if (i == j) continue;
                for (std::size_t u = 0; u < kMaxPorts; ++u)
                    for (std::size_t v = 0; v < kMaxPorts; ++v) {
                        const bool eh = (p.edge(i, j, u, v) > 0.5) == (e.structure.edge(i, j, u, v) == 1);
                        edge_hits += eh;
                        all &= eh;
                        ++edges;
                    }
            }
        }
        graph_hits += all;
    }
    StructureAccuracy a;
    a.nodes = nodes ? static_cast<double>(node_hits) / static_cast<double>(nodes) : 0.0;
    a.edges = edges ? static_cast<double>(edge_hits) / static_cast<double>(edges) : 0.0;
    a.graphs = ex.empty() ? 0.0 : static_cast<double>(graph_hits) / static_cast<double>(ex.size());
    return a;
}

}  // namespace cktdiffuse
