#include <catch_amalgamated.hpp>

#include "cktdiffuse/diffusion.hpp"
#include "cktdiffuse/templates.hpp"

using namespace cktdiffuse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

bool edges_symmetric(const DiscreteGraph& g) {
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t j = 0; j < g.n; ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v)
                    if (g.edge(i, j, u, v) != g.edge(j, i, v, u)) return false;
    return true;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform();
    return m;
}

}  // namespace

TEST_CASE("cosine schedule shape", "[diffusion]") {
    for (int T : {1, 10, 200, 500}) {
        const auto s = cosine_schedule(T);
        CHECK(s.ab(0) == 1.0);
        for (int t = 1; t <= T; ++t) {
            CHECK(s.ab(t) < s.ab(t - 1));
            CHECK(s.a(t) >= 1e-5);
            CHECK(s.a(t) <= 1.0);
        }
        CHECK(s.ab(T) < 1e-3);
    }
    CHECK_THROWS_AS(cosine_schedule(0), std::invalid_argument);
}

TEST_CASE("transition matrix examples", "[diffusion]") {
    CHECK(q_matrix(1.0, 7).isApprox(Eigen::MatrixXd::Identity(7, 7)));
    CHECK((q_matrix(0.0, 4).array() == 0.25).all());
    Eigen::Matrix2d expected;
    expected << 0.75, 0.25, 0.25, 0.75;
    CHECK((q_matrix(0.5, 2) - expected).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(q_matrix(1.5, 3), std::invalid_argument);
    CHECK_THROWS_AS(q_matrix(-0.1, 3), std::invalid_argument);
    CHECK_THROWS_AS(q_matrix(0.5, 1), std::invalid_argument);
}

TEST_CASE("transition matrices are stochastic and compose", "[diffusion]") {
    const auto s = cosine_schedule(200);
    for (int d : {2, 5, 9}) {
        Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(d, d);
        for (int t = 1; t <= 200; ++t) {
            const auto q = q_matrix(s.a(t), d);
            const auto qb = q_bar_matrix(s.ab(t), d);
            CHECK((q.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
            CHECK((qb.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
            CHECK(q.minCoeff() >= 0.0);
            prod = prod * q;
            CHECK((prod - qb).cwiseAbs().maxCoeff() <= 1e-9);
        }
        // Near-uniform at the end of the chain.
        CHECK((prod.array() - 1.0 / d).abs().maxCoeff() < 1e-3);
    }
}

TEST_CASE("continuous forward limits", "[diffusion]") {
    Rng rng(1);
    const auto v0 = random_matrix(4, 3, rng);
    auto r = forward_continuous_at(v0, 1.0, rng);
    CHECK(r.vt == v0);
    r = forward_continuous_at(v0, 0.0, rng);
    CHECK(r.vt == r.eps);
    const auto s = cosine_schedule(50);
    CHECK_THROWS_AS(forward_continuous(v0, 0, s, rng), std::invalid_argument);
    CHECK_THROWS_AS(forward_continuous(v0, 51, s, rng), std::invalid_argument);
}

TEST_CASE("continuous forward statistics", "[diffusion]") {
    Rng rng(2024);
    const Eigen::MatrixXd v0 = Eigen::MatrixXd::Ones(1, 1);
    const int draws = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double x = forward_continuous_at(v0, 0.64, rng).vt(0);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / draws;
    const double var = sq / draws - mean * mean;
    CHECK_THAT(mean, WithinAbs(0.8, 0.01));
    CHECK_THAT(var, WithinRel(0.36, 0.02));
}

TEST_CASE("continuous reverse step", "[diffusion]") {
    Rng rng(5);
    const auto vt = random_matrix(3, 4, rng);
    const auto eps = random_matrix(3, 4, rng);
    // Step alpha of 1 at t = 2.
    NoiseSchedule unit;
    unit.T = 2;
    unit.alpha = {1.0, 0.5, 1.0};
    unit.alpha_bar = {1.0, 0.5, 0.5};
    CHECK(reverse_continuous_step(vt, eps, 2, unit) == vt);

    for (int trial = 0; trial < 20; ++trial) {
        const auto rows = 1 + static_cast<Eigen::Index>(rng.index(8));
        const auto cols = 1 + static_cast<Eigen::Index>(rng.index(5));
        const auto v0 = random_matrix(rows, cols, rng);
        const auto s1 = cosine_schedule(1);
        const auto fw = forward_continuous(v0, 1, s1, rng);
        const auto back = reverse_continuous_step(fw.vt, fw.eps, 1, s1);
        CHECK(back.rows() == rows);
        CHECK(back.cols() == cols);
        CHECK((back - v0).cwiseAbs().maxCoeff() <= 1e-9);
    }
    CHECK_THROWS_AS(reverse_continuous_step(vt, eps, 1, 1, unit), std::invalid_argument);
}

TEST_CASE("oracle denoiser reconstructs through the full reverse pass", "[diffusion]") {
    Rng rng(8);
    for (int T = 1; T <= 10; ++T)
        for (int interval : {1, 2, 3}) {
            if (interval > T) continue;
            const auto s = cosine_schedule(T);
            const auto v0 = random_matrix(6, 4, rng);
            Eigen::MatrixXd v = forward_continuous(v0, T, s, rng).vt;
            for (int t : ddim_schedule(T, interval)) {
                const int prev = previous_step(t, interval);
                v = reverse_continuous_step(v, eps_from_v0(v, v0, t, s), t, prev, s);
            }
            CHECK((v - v0).cwiseAbs().maxCoeff() <= 1e-6);
        }
}

TEST_CASE("discrete forward", "[diffusion]") {
    const auto g = to_discrete_tensor(find_template("nmos_cmota").builder(StageConfig::MillerRz));
    Rng rng(9);
    for (EdgeNoise mode : {EdgeNoise::PortRows, EdgeNoise::Binary}) {
        CHECK(forward_discrete_at(g, 1.0, rng, mode) == g);
        for (double ab : {0.0, 0.3, 0.9}) {
            const auto noisy = forward_discrete_at(g, ab, rng, mode);
            CHECK(noisy.n == g.n);
            CHECK(edges_symmetric(noisy));
            for (std::size_t i = 0; i < g.n; ++i) CHECK_NOTHROW(noisy.kind_of(i));
        }
    }
    DiscreteGraph lone(1);
    lone.node(0, 3) = 1;
    for (EdgeNoise mode : {EdgeNoise::PortRows, EdgeNoise::Binary}) {
        const auto noisy = forward_discrete_at(lone, 0.0, rng, mode);
        CHECK(std::all_of(noisy.edges.begin(), noisy.edges.end(), [](auto e) { return e == 0; }));
    }
    const auto s = cosine_schedule(10);
    CHECK_THROWS_AS(forward_discrete(g, 0, s, rng), std::invalid_argument);
}

TEST_CASE("discrete forward at alpha_bar 0 mixes kinds uniformly", "[diffusion]") {
    DiscreteGraph one(1);
    one.node(0, 0) = 1;
    Rng rng(31);
    std::array<double, kKindCount> counts{};
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[forward_discrete_at(one, 0.0, rng).kind_of(0)] += 1;
    double chi2 = 0.0;
    const double expected = static_cast<double>(draws) / kKindCount;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // chi-square, 8 degrees of freedom, upper 1% point
    CHECK(chi2 < 20.09);
}

TEST_CASE("port-row edge noise keeps empty rows empty and spreads ones over the row", "[diffusion]") {
    DiscreteGraph g(2);
    g.node(0, 0) = 1;
    g.node(1, 1) = 1;
    g.edge(0, 1, 2, 3) = 1;
    g.edge(1, 0, 3, 2) = 1;
    Rng rng(77);
    std::array<double, kMaxPorts> row{};
    const int draws = 50000;
    for (int i = 0; i < draws; ++i) {
        const auto noisy = forward_discrete_at(g, 0.0, rng, EdgeNoise::PortRows);
        for (std::size_t u = 0; u < kMaxPorts; ++u)
            if (u != 2)
                for (std::size_t v = 0; v < kMaxPorts; ++v) REQUIRE(noisy.edge(0, 1, u, v) == 0);
        for (std::size_t v = 0; v < kMaxPorts; ++v) row[v] += noisy.edge(0, 1, 2, v);
    }
    for (double r : row) CHECK_THAT(r / draws, WithinAbs(0.2, 0.01));
}

TEST_CASE("categorical posterior", "[diffusion]") {
    // d = 2 hand case, enumerated exactly: (11/28, 17/28).
    std::array<double, 2> out{};
    const std::array<double, 2> ph{0.5, 0.5};
    REQUIRE(categorical_posterior(1, ph, 0.5, 0.8, out));
    CHECK_THAT(out[0], WithinAbs(11.0 / 28.0, 1e-15));
    CHECK_THAT(out[1], WithinAbs(17.0 / 28.0, 1e-15));

    // Bayes with explicit matrices for d = 9.
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const double a_step = rng.uniform(), ab_s = rng.uniform();
        const std::size_t xt = rng.index(9);
        std::vector<double> p(9);
        double z = 0;
        for (auto& x : p) z += (x = rng.uniform());
        for (auto& x : p) x /= z;
        const auto Qs = q_matrix(a_step, 9), Qb = q_bar_matrix(ab_s, 9), Qt = q_bar_matrix(a_step * ab_s, 9);
        std::vector<double> expected(9, 0.0), got(9);
        for (int x0 = 0; x0 < 9; ++x0)
            for (int xs = 0; xs < 9; ++xs)
                expected[xs] += p[x0] * Qs(xs, static_cast<Eigen::Index>(xt)) * Qb(x0, xs) / Qt(x0, static_cast<Eigen::Index>(xt));
        REQUIRE(categorical_posterior(xt, p, a_step, ab_s, got));
        for (int i = 0; i < 9; ++i) CHECK_THAT(got[i], WithinAbs(expected[i], 1e-12));
    }

    // Clean previous step and a point mass collapse onto it.
    std::array<double, 3> pm{0.0, 1.0, 0.0}, o3{};
    REQUIRE(categorical_posterior(2, pm, 0.4, 1.0, o3));
    CHECK(o3 == std::array<double, 3>{0.0, 1.0, 0.0});

    // No mass anywhere resets to uniform.
    std::array<double, 3> zero{};
    CHECK_FALSE(categorical_posterior(0, zero, 0.5, 0.5, o3));
    CHECK(o3[0] == Catch::Approx(1.0 / 3));
}

TEST_CASE("discrete reverse step", "[diffusion]") {
    const auto clean = to_discrete_tensor(make_five_t_ota());
    const auto s = cosine_schedule(20);
    Rng rng(12);
    DiscreteProbs point(clean.n);
    for (std::size_t i = 0; i < clean.n; ++i)
        for (std::size_t c = 0; c < kKindCount; ++c) point.node(i, c) = clean.node(i, c);
    for (std::size_t e = 0; e < clean.edges.size(); ++e) point.edges[e] = clean.edges[e];

    // alpha_bar(0) = 1: a point-mass prediction is returned exactly.
    for (int trial = 0; trial < 20; ++trial) {
        const auto noisy = forward_discrete(clean, 1 + static_cast<int>(rng.index(20)), s, rng, EdgeNoise::Binary);
        const auto t = 1 + static_cast<int>(rng.index(20));
        PosteriorStats stats;
        CHECK(reverse_discrete_step(noisy, point, t, 0, s, rng, &stats) == clean);
        CHECK(stats.degenerate == 0);
    }

    Rng r2(13);
    auto g = sample_discrete_prior(clean.n, r2);
    CHECK(edges_symmetric(g));
    DiscreteProbs flat(clean.n);
    std::fill(flat.nodes.begin(), flat.nodes.end(), 1.0 / kKindCount);
    std::fill(flat.edges.begin(), flat.edges.end(), 0.3);
    for (int t : ddim_schedule(20, 3)) {
        g = reverse_discrete_step(g, flat, t, previous_step(t, 3), s, r2);
        CHECK(g.n == clean.n);
        CHECK(edges_symmetric(g));
    }

    PosteriorStats stats;
    DiscreteProbs empty(clean.n);
    (void)reverse_discrete_step(clean, empty, 5, s, r2, &stats);
    // Edge probabilities of 0 are a valid point mass; only the all-zero kind rows degenerate.
    CHECK(stats.degenerate == clean.n);
    CHECK_THROWS_AS(reverse_discrete_step(clean, DiscreteProbs(2), 5, s, r2), std::invalid_argument);
}

TEST_CASE("strided timesteps", "[diffusion]") {
    CHECK(ddim_schedule(500, 1).size() == 500);
    CHECK(ddim_schedule(500, 20).size() == 25);
    CHECK(ddim_schedule(100, 10) == std::vector<int>{100, 90, 80, 70, 60, 50, 40, 30, 20, 10});
    CHECK(ddim_schedule(10, 10) == std::vector<int>{10});
    for (int T : {7, 100, 500})
        for (int i : {1, 3, 5, 7}) {
            if (i > T) continue;
            CHECK(static_cast<int>(ddim_schedule(T, i).size()) == (T + i - 1) / i);
        }
    CHECK(previous_step(3, 5) == 0);
    CHECK_THROWS_AS(ddim_schedule(10, 11), std::invalid_argument);
    CHECK_THROWS_AS(ddim_schedule(10, 0), std::invalid_argument);
}
