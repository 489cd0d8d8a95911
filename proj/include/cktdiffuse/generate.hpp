#pragma once

// Spec-conditioned generation: node count, then structure by discrete
// reverse diffusion, then parameters by strided continuous reverse diffusion.

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bindings.hpp"
#include "diffusion.hpp"
#include "graph.hpp"
#include "models.hpp"

namespace cktdiffuse {

/// The three predictors generation needs. Any of them can be replaced.
struct Denoisers {
    int min_nodes = 1;
    std::function<std::vector<double>(const SpecVector&)> count;  // probabilities for min_nodes, min_nodes+1, ...
    std::function<DiscreteProbs(const DiscreteGraph& gt, const SpecVector&, int t)> discrete;
    std::function<nn::Mat(const DiscreteGraph& structure, const nn::Mat& vt, const SpecVector&, int t)> continuous;
};

[[nodiscard]] inline Denoisers model_denoisers(const ModelBundle& mb) {
    Denoisers d;
    d.min_nodes = mb.config.model.min_nodes;
    d.count = [&mb](const SpecVector& y) { return predict_count(mb, y); };
    d.discrete = [&mb](const DiscreteGraph& gt, const SpecVector& y, int t) { return predict_discrete(mb, gt, y, t); };
    d.continuous = [&mb](const DiscreteGraph& s, const nn::Mat& vt, const SpecVector& y, int t) {
        return predict_eps(mb, s, vt, y, t);
    };
    return d;
}

/// Exact predictors that always point at `target`.
[[nodiscard]] inline Denoisers oracle_denoisers(const CircuitGraph& target, const NoiseSchedule& sch) {
    auto ex = std::make_shared<DiscreteGraph>(to_discrete_tensor(target));
    auto v0 = std::make_shared<nn::Mat>(static_cast<nn::Index>(target.size()), static_cast<nn::Index>(kParamCount));
    for (std::size_t i = 0; i < target.size(); ++i)
        for (std::size_t p = 0; p < kParamCount; ++p)
            (*v0)(static_cast<nn::Index>(i), static_cast<nn::Index>(p)) = target.node(i).params[p];
    Denoisers d;
    d.min_nodes = static_cast<int>(target.size());
    d.count = [](const SpecVector&) { return std::vector<double>{1.0}; };
    d.discrete = [ex](const DiscreteGraph&, const SpecVector&, int) {
        DiscreteProbs p(ex->n);
        for (std::size_t i = 0; i < ex->nodes.size(); ++i) p.nodes[i] = ex->nodes[i];
        for (std::size_t i = 0; i < ex->edges.size(); ++i) p.edges[i] = ex->edges[i];
        return p;
    };
    d.continuous = [v0, &sch](const DiscreteGraph&, const nn::Mat& vt, const SpecVector&, int t) {
        return eps_from_v0(vt, *v0, t, sch);
    };
    return d;
}

struct GenerationResult {
    CircuitGraph graph;
    bool valid = false;
    ValidationReport report;
    std::size_t nodes = 0;
    int discrete_calls = 0;
    int continuous_calls = 0;
    std::size_t degenerate = 0;
};

/// One circuit for spec y. interval is the stride of both reverse chains.
[[nodiscard]] inline GenerationResult generate(const SpecVector& y, const Denoisers& d, const NoiseSchedule& sch,
                                               int interval, Rng& rng) {
    const auto steps = ddim_schedule(sch.T, interval);
    GenerationResult res;

    const auto probs = d.count(y);
    if (probs.empty()) throw std::runtime_error("count predictor returned no classes");
    res.nodes = static_cast<std::size_t>(d.min_nodes) + rng.categorical(probs);

    PosteriorStats stats;
    DiscreteGraph g = sample_discrete_prior(res.nodes, rng);
    for (int t : steps) {
        const auto p = d.discrete(g, y, t);
        ++res.discrete_calls;
        g = reverse_discrete_step(g, p, t, previous_step(t, interval), sch, rng, &stats);
    }
    res.degenerate = stats.degenerate;

    nn::Mat v(static_cast<nn::Index>(res.nodes), static_cast<nn::Index>(kParamCount));
    for (nn::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    for (int t : steps) {
        const nn::Mat eps = d.continuous(g, v, y, t);
        ++res.continuous_calls;
        v = reverse_continuous_step(v, eps, t, previous_step(t, interval), sch);
    }

    const nn::Mat mask = param_mask(g);
    std::vector<double> params(res.nodes * kParamCount);
    for (std::size_t i = 0; i < res.nodes; ++i)
        for (std::size_t p = 0; p < kParamCount; ++p) {
            const auto r = static_cast<nn::Index>(i), c = static_cast<nn::Index>(p);
            params[i * kParamCount + p] = mask(r, c) > 0.0 ? std::clamp(v(r, c), 0.0, 1.0) : 0.0;
        }
    res.graph = from_discrete_tensor(g, params);
    recover_bindings(res.graph);
    res.report = validate(res.graph);
    res.valid = res.report.empty();
    return res;
}

}  // namespace cktdiffuse
