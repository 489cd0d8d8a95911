#pragma once

// Diffusion on circuit graphs: Gaussian noising of node parameters and
// uniform-mixing transition matrices for node kinds and port edges.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "graph.hpp"
#include "random.hpp"

namespace cktdiffuse {

// -----------------------------------------------------------------------------
// Schedule
// -----------------------------------------------------------------------------

/// alpha[t], alpha_bar[t] for t = 0..T with alpha[0] = alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    [[nodiscard]] double a(int t) const { return alpha.at(static_cast<std::size_t>(t)); }
    [[nodiscard]] double ab(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

/// Cosine schedule; alpha_bar is rebuilt as the running product of the clipped alphas.
[[nodiscard]] inline NoiseSchedule cosine_schedule(int T, double s = 0.008, double clip = 1e-5) {
    if (T < 1) throw std::invalid_argument("T must be at least 1");
    auto f = [&](int t) {
        const double c = std::cos((static_cast<double>(t) / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
        return c * c;
    };
    NoiseSchedule sch;
    sch.T = T;
    sch.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    sch.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
    const double f0 = f(0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double target = f(t) / f0;
        const double a = std::clamp(target / prev, clip, 1.0);
        sch.alpha[static_cast<std::size_t>(t)] = a;
        prev *= a;
        sch.alpha_bar[static_cast<std::size_t>(t)] = prev;
    }
    return sch;
}

/// Descending timesteps T, T-interval, ... (one denoiser call each).
[[nodiscard]] inline std::vector<int> ddim_schedule(int T, int interval) {
    if (interval < 1) throw std::invalid_argument("interval must be at least 1");
    if (interval > T) throw std::invalid_argument("interval exceeds T");
    std::vector<int> ts;
    for (int t = T; t > 0; t -= interval) ts.push_back(t);
    return ts;
}

/// Step target after t in a strided pass.
[[nodiscard]] constexpr int previous_step(int t, int interval) { return t > interval ? t - interval : 0; }

// -----------------------------------------------------------------------------
// Transition matrices
// -----------------------------------------------------------------------------

/// alpha*I + (1 - alpha)/d * ones.
[[nodiscard]] inline Eigen::MatrixXd q_matrix(double alpha, int d) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha outside [0,1]");
    if (d < 2) throw std::invalid_argument("category count must be at least 2");
    Eigen::MatrixXd q = Eigen::MatrixXd::Constant(d, d, (1.0 - alpha) / d);
    q.diagonal().array() += alpha;
    return q;
}

[[nodiscard]] inline Eigen::MatrixXd q_bar_matrix(double alpha_bar, int d) { return q_matrix(alpha_bar, d); }

// -----------------------------------------------------------------------------
// Continuous parameters
// -----------------------------------------------------------------------------

struct NoisedParams {
    Eigen::MatrixXd vt;
    Eigen::MatrixXd eps;
};

[[nodiscard]] inline NoisedParams forward_continuous_at(const Eigen::MatrixXd& v0, double alpha_bar, Rng& rng) {
    NoisedParams out{Eigen::MatrixXd(v0.rows(), v0.cols()), Eigen::MatrixXd(v0.rows(), v0.cols())};
    for (Eigen::Index i = 0; i < v0.size(); ++i) out.eps(i) = rng.normal();
    out.vt = std::sqrt(alpha_bar) * v0 + std::sqrt(1.0 - alpha_bar) * out.eps;
    return out;
}

[[nodiscard]] inline NoisedParams forward_continuous(const Eigen::MatrixXd& v0, int t, const NoiseSchedule& sch,
                                                     Rng& rng) {
    if (t < 1 || t > sch.T) throw std::invalid_argument("timestep out of range");
    return forward_continuous_at(v0, sch.ab(t), rng);
}

/// Deterministic update from t to s < t using the step alpha alpha_bar(t)/alpha_bar(s).
[[nodiscard]] inline Eigen::MatrixXd reverse_continuous_step(const Eigen::MatrixXd& vt, const Eigen::MatrixXd& eps_hat,
                                                             int t, int s, const NoiseSchedule& sch) {
    if (t < 1 || t > sch.T || s < 0 || s >= t) throw std::invalid_argument("bad reverse step");
    const double a = sch.ab(t) / sch.ab(s);
    const double coef = (1.0 - a) / std::sqrt(1.0 - sch.ab(t));
    return (vt - coef * eps_hat) / std::sqrt(a);
}

[[nodiscard]] inline Eigen::MatrixXd reverse_continuous_step(const Eigen::MatrixXd& vt, const Eigen::MatrixXd& eps_hat,
                                                             int t, const NoiseSchedule& sch) {
    return reverse_continuous_step(vt, eps_hat, t, t - 1, sch);
}

/// The noise that explains vt given a clean estimate.
[[nodiscard]] inline Eigen::MatrixXd eps_from_v0(const Eigen::MatrixXd& vt, const Eigen::MatrixXd& v0_hat, int t,
                                                 const NoiseSchedule& sch) {
    return (vt - std::sqrt(sch.ab(t)) * v0_hat) / std::sqrt(1.0 - sch.ab(t));
}

// -----------------------------------------------------------------------------
// Discrete graphs
// -----------------------------------------------------------------------------

/// PortRows: each xi row times Q-bar over k ports, then per-entry Bernoulli.
/// Binary: each xi entry mixed over {0,1}, matching the d=2 reverse posterior.
enum class EdgeNoise : std::uint8_t { PortRows, Binary };

[[nodiscard]] inline std::string_view edge_noise_name(EdgeNoise e) { return e == EdgeNoise::PortRows ? "port_rows" : "binary"; }

[[nodiscard]] inline EdgeNoise edge_noise_from_name(std::string_view s) {
    if (s == "port_rows") return EdgeNoise::PortRows;
    if (s == "binary") return EdgeNoise::Binary;
    throw std::invalid_argument("unknown edge noise: " + std::string(s));
}

[[nodiscard]] inline DiscreteGraph forward_discrete_at(const DiscreteGraph& g, double alpha_bar, Rng& rng,
                                                       EdgeNoise mode = EdgeNoise::PortRows) {
    constexpr std::size_t a = kKindCount, k = kMaxPorts;
    DiscreteGraph out(g.n);
    std::array<double, a> pv{};
    for (std::size_t i = 0; i < g.n; ++i) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < a; ++c) row_sum += g.node(i, c);
        for (std::size_t c = 0; c < a; ++c) pv[c] = alpha_bar * g.node(i, c) + (1.0 - alpha_bar) * row_sum / a;
        out.node(i, rng.categorical(pv)) = 1;
    }
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = i + 1; j < g.n; ++j)
            for (std::size_t u = 0; u < k; ++u) {
                double row_sum = 0.0;
                for (std::size_t v = 0; v < k; ++v) row_sum += g.edge(i, j, u, v);
                for (std::size_t v = 0; v < k; ++v) {
                    const double x = g.edge(i, j, u, v);
                    const double p = mode == EdgeNoise::PortRows ? alpha_bar * x + (1.0 - alpha_bar) * row_sum / k
                                                                 : alpha_bar * x + (1.0 - alpha_bar) * 0.5;
                    const std::uint8_t e = rng.bernoulli(p) ? 1 : 0;
                    out.edge(i, j, u, v) = e;
                    out.edge(j, i, v, u) = e;
                }
            }
    return out;
}

[[nodiscard]] inline DiscreteGraph forward_discrete(const DiscreteGraph& g, int t, const NoiseSchedule& sch, Rng& rng,
                                                    EdgeNoise mode = EdgeNoise::PortRows) {
    if (t < 1 || t > sch.T) throw std::invalid_argument("timestep out of range");
    return forward_discrete_at(g, sch.ab(t), rng, mode);
}

/// Limit distribution of the Binary mode: uniform kinds, fair-coin edge entries.
[[nodiscard]] inline DiscreteGraph sample_discrete_prior(std::size_t n, Rng& rng) {
    DiscreteGraph out(n);
    for (std::size_t i = 0; i < n; ++i) out.node(i, rng.index(kKindCount)) = 1;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v) {
                    const std::uint8_t e = rng.bernoulli(0.5) ? 1 : 0;
                    out.edge(i, j, u, v) = e;
                    out.edge(j, i, v, u) = e;
                }
    return out;
}

/// Clean-graph predictions: per-node kind distributions (n x a) and the
/// probability that each edge entry is 1 (n x n x k x k).
struct DiscreteProbs {
    std::size_t n = 0;
    std::vector<double> nodes;
    std::vector<double> edges;

    DiscreteProbs() = default;
    explicit DiscreteProbs(std::size_t count)
        : n(count), nodes(count * kKindCount, 0.0), edges(count * count * kMaxPorts * kMaxPorts, 0.0) {}

    [[nodiscard]] double& node(std::size_t i, std::size_t c) { return nodes[i * kKindCount + c]; }
    [[nodiscard]] double node(std::size_t i, std::size_t c) const { return nodes[i * kKindCount + c]; }
    [[nodiscard]] double& edge(std::size_t i, std::size_t j, std::size_t u, std::size_t v) {
        return edges[DiscreteGraph::edge_offset(n, i, j) + u * kMaxPorts + v];
    }
    [[nodiscard]] double edge(std::size_t i, std::size_t j, std::size_t u, std::size_t v) const {
        return edges[DiscreteGraph::edge_offset(n, i, j) + u * kMaxPorts + v];
    }
};

struct PosteriorStats {
    std::size_t degenerate = 0;
};

/// p(x_s) = sum_x q(x_s | x_0 = x, x_t) p_hat(x) with
/// q(x_s | x_0, x_t) proportional to Q_step[x_s, x_t] * Q_bar_s[x_0, x_s].
/// Writes d probabilities into out; returns false when they had to be reset to uniform.
inline bool categorical_posterior(std::size_t xt, std::span<const double> p_hat, double alpha_step,
                                  double alpha_bar_s, std::span<double> out) {
    const std::size_t d = p_hat.size();
    const double u_step = (1.0 - alpha_step) / static_cast<double>(d);
    const double u_bar = (1.0 - alpha_bar_s) / static_cast<double>(d);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t x0 = 0; x0 < d; ++x0) {
        if (p_hat[x0] <= 0.0) continue;
        double z = 0.0;
        for (std::size_t xs = 0; xs < d; ++xs)
            z += (u_step + (xs == xt ? alpha_step : 0.0)) * (u_bar + (xs == x0 ? alpha_bar_s : 0.0));
        if (!(z > 0.0)) continue;
        for (std::size_t xs = 0; xs < d; ++xs)
            out[xs] += p_hat[x0] * (u_step + (xs == xt ? alpha_step : 0.0)) * (u_bar + (xs == x0 ? alpha_bar_s : 0.0)) / z;
    }
    double total = 0.0;
    for (double p : out) total += p;
    if (!(total > 0.0) || !std::isfinite(total)) {
        std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(d));
        return false;
    }
    for (double& p : out) p /= total;
    return true;
}

/// One strided reverse step t -> s on kinds and edges; edges sampled on the
/// upper triangle and mirrored.
[[nodiscard]] inline DiscreteGraph reverse_discrete_step(const DiscreteGraph& gt, const DiscreteProbs& p, int t, int s,
                                                         const NoiseSchedule& sch, Rng& rng,
                                                         PosteriorStats* stats = nullptr) {
    if (t < 1 || t > sch.T || s < 0 || s >= t) throw std::invalid_argument("bad reverse step");
    if (p.n != gt.n) throw std::invalid_argument("prediction size mismatch");
    const double a_step = sch.ab(t) / sch.ab(s);
    const double ab_s = sch.ab(s);
    DiscreteGraph out(gt.n);
    std::array<double, kKindCount> post{};
    for (std::size_t i = 0; i < gt.n; ++i) {
        const std::span<const double> ph(p.nodes.data() + i * kKindCount, kKindCount);
        if (!categorical_posterior(gt.kind_of(i), ph, a_step, ab_s, post) && stats) ++stats->degenerate;
        out.node(i, rng.categorical(post)) = 1;
    }
    std::array<double, 2> ph2{}, post2{};
    for (std::size_t i = 0; i < gt.n; ++i)
        for (std::size_t j = i + 1; j < gt.n; ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v) {
                    const double p1 = std::clamp(p.edge(i, j, u, v), 0.0, 1.0);
                    ph2 = {1.0 - p1, p1};
                    if (!categorical_posterior(gt.edge(i, j, u, v), ph2, a_step, ab_s, post2) && stats)
                        ++stats->degenerate;
                    const std::uint8_t e = rng.bernoulli(post2[1]) ? 1 : 0;
                    out.edge(i, j, u, v) = e;
                    out.edge(j, i, v, u) = e;
                }
    return out;
}

[[nodiscard]] inline DiscreteGraph reverse_discrete_step(const DiscreteGraph& gt, const DiscreteProbs& p, int t,
                                                         const NoiseSchedule& sch, Rng& rng,
                                                         PosteriorStats* stats = nullptr) {
    return reverse_discrete_step(gt, p, t, t - 1, sch, rng, stats);
}

}  // namespace cktdiffuse
