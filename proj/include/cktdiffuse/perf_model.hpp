#pragma once

// =============================================================================
// cktdiffuse - analytic amplifier evaluator
// =============================================================================
// Square-law MOS model, Newton DC operating point, complex nodal analysis for
// the frequency response, adjoint noise, and clamp solves for slew rate.
//
// Testbench conventions (net names): vdd, 0, inp, inn, out, optional ibias.
// The DC point is taken in unity-gain feedback (inn tied to out) with inp at a
// common-mode voltage; small-signal analyses run open loop around that point.
// =============================================================================

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "netlist.hpp"

namespace cktdiffuse {

// -----------------------------------------------------------------------------
// Metrics
// -----------------------------------------------------------------------------

enum class Metric : std::size_t { Pdiss, GainDC, GBW, PM, SRp, SRn, VOL, VOH, CMRR, PSRR, Noise1k, Noise1G, CL };
inline constexpr std::size_t kMetricCount = 13;

using MetricsVector = std::array<double, kMetricCount>;

[[nodiscard]] constexpr std::size_t idx(Metric m) { return static_cast<std::size_t>(m); }

[[nodiscard]] constexpr std::string_view metric_name(Metric m) {
    constexpr std::array<std::string_view, kMetricCount> names{"Pdiss", "GainDC", "GBW",  "PM",   "SRp",       "SRn",      "VOL",
                                                               "VOH",   "CMRR",   "PSRR", "Noise1kHz", "Noise1GHz", "CL"};
    return names[idx(m)];
}

[[nodiscard]] inline Metric metric_from_name(std::string_view s) {
    for (std::size_t i = 0; i < kMetricCount; ++i)
        if (metric_name(static_cast<Metric>(i)) == s) return static_cast<Metric>(i);
    throw std::invalid_argument("unknown metric: " + std::string(s));
}

// -----------------------------------------------------------------------------
// Model constants
// -----------------------------------------------------------------------------

struct ModelConstants {
    double kn = 200e-6;            // un*Cox, A/V^2
    double kp = 100e-6;            // up*Cox, A/V^2
    double vth = 0.4;              // V, both polarities
    double lambda_1um = 0.1;       // 1/V at L = 1 um, scales as 1/L
    double gamma = 2.0 / 3.0;      // thermal noise factor
    double kf = 1e-24;             // flicker coefficient, V^2 F
    double cox = 1e-2;             // F/m^2
    double cov = 2e-10;            // overlap capacitance per width, F/m
    double cj = 1e-9;              // junction capacitance per width, F/m
    double temperature = 300.0;    // K
    double supply = 1.2;           // V
    double bias_overdrive = 0.15;  // V, overdrive of the bias-pin reference device
    double smoothing = 1e-4;       // V, overdrive smoothing near cutoff
    double rail_margin = 0.05;     // V, allowed excursion past the rails
};

inline constexpr double kBoltzmann = 1.380649e-23;

enum class Region : std::uint8_t { Off, Triode, Saturation };

[[nodiscard]] constexpr std::string_view region_name(Region r) {
    constexpr std::array<std::string_view, 3> names{"off", "triode", "saturation"};
    return names[static_cast<std::size_t>(r)];
}

struct TransistorOp {
    std::string name;
    bool pmos = false;
    double id = 0.0;   // A, magnitude
    double gm = 0.0;   // S
    double gds = 0.0;  // S
    double ro = 0.0;   // ohm
    double vov = 0.0;  // V
    double vds = 0.0;  // V, magnitude in the conducting orientation
    Region region = Region::Off;
};

struct OperatingPoint {
    bool converged = false;
    int iterations = 0;
    double vcm = 0.0;
    double supply_current = 0.0;  // A drawn from vdd
    std::map<std::string, double> voltages;
    std::vector<TransistorOp> transistors;

    [[nodiscard]] bool all_saturated() const {
        return std::all_of(transistors.begin(), transistors.end(),
                           [](const TransistorOp& t) { return t.region == Region::Saturation; });
    }
    [[nodiscard]] const TransistorOp* find(std::string_view name) const {
        for (const auto& t : transistors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

// -----------------------------------------------------------------------------
// Compiled circuit
// -----------------------------------------------------------------------------

namespace mna {

struct Mos {
    std::string name;
    bool pmos = false;
    int d = 0, g = 0, s = 0;
    double w = 0.0;  // total width including multiplier
    double l = 0.0;
    double beta = 0.0;
    double lambda = 0.0;
};

struct TwoTerminal {
    std::string name;
    int a = 0, b = 0;
    double value = 0.0;
};

struct Circuit {
    std::vector<std::string> nets;
    std::map<std::string, int> index;
    std::vector<Mos> mos;
    std::vector<TwoTerminal> res, cap, isrc;

    [[nodiscard]] int net(std::string_view name) const {
        auto it = index.find(std::string(name));
        return it == index.end() ? -1 : it->second;
    }
};

inline int add_net(Circuit& c, const std::string& name) {
    auto [it, inserted] = c.index.emplace(name, static_cast<int>(c.nets.size()));
    if (inserted) c.nets.push_back(name);
    return it->second;
}

inline constexpr std::string_view kBiasReference = "XBIAS";

/// Flatten cards; a diode-connected reference device is added on the ibias net.
[[nodiscard]] inline Circuit compile(const Netlist& nl, const ModelConstants& mc) {
    Circuit c;
    add_net(c, "0");
    add_net(c, "vdd");
    for (const auto& card : nl.cards) {
        std::vector<int> t;
        for (const auto& name : card.terminals) t.push_back(add_net(c, name));
        if (card.type == 'M') {
            Mos m;
            m.name = card.name;
            m.pmos = card.model == "pmos";
            m.d = t[0];
            m.g = t[1];
            m.s = t[2];
            const double mult = card.params.contains("M") ? card.params.at("M") : 1.0;
            m.w = card.params.at("W") * mult;
            m.l = card.params.at("L");
            m.beta = (m.pmos ? mc.kp : mc.kn) * m.w / m.l;
            m.lambda = mc.lambda_1um * 1e-6 / m.l;
            c.mos.push_back(std::move(m));
        } else {
            TwoTerminal tt{card.name, t[0], t[1], card.value()};
            if (card.type == 'R') c.res.push_back(tt);
            else if (card.type == 'C') c.cap.push_back(tt);
            else c.isrc.push_back(tt);
        }
    }
    const int ib = c.net("ibias");
    if (ib >= 0) {
        double inject = 0.0;
        for (const auto& s : c.isrc) {
            if (s.b == ib) inject += s.value;
            if (s.a == ib) inject -= s.value;
        }
        if (inject > 0.0) {
            Mos m;
            m.name = std::string(kBiasReference);
            m.d = m.g = ib;
            m.s = 0;
            m.l = 1e-6;
            m.lambda = mc.lambda_1um;
            const double vov = mc.bias_overdrive;
            m.beta = 2.0 * inject / (vov * vov * (1.0 + m.lambda * (mc.vth + vov)));
            m.w = m.beta * m.l / mc.kn;
            c.mos.push_back(std::move(m));
        }
    }
    return c;
}

struct MosEval {
    double i = 0.0;  // current from d to s
    double dvd = 0.0, dvg = 0.0, dvs = 0.0;
    double gm = 0.0, gds = 0.0;
    double vov = 0.0, vds = 0.0;
    Region region = Region::Off;
};

/// Square law in the conducting orientation; PMOS handled by voltage mirroring.
[[nodiscard]] inline MosEval eval_mos(const Mos& m, double vd, double vg, double vs, const ModelConstants& mc) {
    const double sigma = m.pmos ? -1.0 : 1.0;
    vd *= sigma;
    vg *= sigma;
    vs *= sigma;
    const bool swapped = vd < vs;
    const double vgs = swapped ? vg - vd : vg - vs;
    const double vds = swapped ? vs - vd : vd - vs;
    const double vov = vgs - mc.vth;
    const double root = std::sqrt(vov * vov + mc.smoothing * mc.smoothing);
    const double veff = 0.5 * (vov + root);
    const double dveff = 0.5 * (1.0 + vov / root);
    const double clm = 1.0 + m.lambda * vds;
    double f, gm, gds;
    if (vds >= veff) {
        f = 0.5 * m.beta * veff * veff * clm;
        gm = m.beta * veff * clm * dveff;
        gds = 0.5 * m.beta * veff * veff * m.lambda;
    } else {
        const double core = veff * vds - 0.5 * vds * vds;
        f = m.beta * core * clm;
        gm = m.beta * vds * clm * dveff;
        gds = m.beta * (veff - vds) * clm + m.beta * core * m.lambda;
    }
    MosEval e;
    e.gm = gm;
    e.gds = gds;
    e.vov = vov;
    e.vds = vds;
    e.region = vov <= 0.0 ? Region::Off : (vds >= vov ? Region::Saturation : Region::Triode);
    if (!swapped) {
        e.i = sigma * f;
        e.dvg = gm;
        e.dvd = gds;
        e.dvs = -gm - gds;
    } else {
        e.i = -sigma * f;
        e.dvg = -gm;
        e.dvs = -gds;
        e.dvd = gm + gds;
    }
    return e;
}

/// Net voltage constraints for one solve: fixed voltages and merged nets.
struct Bench {
    std::vector<std::optional<double>> fixed;  // by representative net
    std::vector<int> alias;                    // net -> representative

    explicit Bench(std::size_t nets) : fixed(nets), alias(nets) {
        for (std::size_t i = 0; i < nets; ++i) alias[i] = static_cast<int>(i);
    }
    void fix(int net, double v) {
        if (net >= 0) fixed[static_cast<std::size_t>(alias[static_cast<std::size_t>(net)])] = v;
    }
    void merge(int from, int into) {
        if (from >= 0 && into >= 0) alias[static_cast<std::size_t>(from)] = alias[static_cast<std::size_t>(into)];
    }
};

struct DcResult {
    bool converged = false;
    int iterations = 0;
    std::vector<double> v;  // per net
};

struct SolverSettings {
    double tolerance = 1e-6;  // V, max Newton update
    int max_iterations = 200;
    double max_step = 0.2;    // V per iteration
};

/// Damped Newton on KCL with gmin stepping as a fallback.
[[nodiscard]] inline DcResult solve(const Circuit& c, const Bench& bench, const ModelConstants& mc,
                                    const SolverSettings& st = {}) {
    const std::size_t n_nets = c.nets.size();
    std::vector<int> unk(n_nets, -1);
    int n = 0;
    for (std::size_t i = 0; i < n_nets; ++i)
        if (bench.alias[i] == static_cast<int>(i) && !bench.fixed[i]) unk[i] = n++;

    auto voltages = [&](const Eigen::VectorXd& x) {
        std::vector<double> v(n_nets);
        for (std::size_t i = 0; i < n_nets; ++i) {
            const auto r = static_cast<std::size_t>(bench.alias[i]);
            v[i] = bench.fixed[r] ? *bench.fixed[r] : x[unk[r]];
        }
        return v;
    };
    auto row = [&](int net) { return unk[static_cast<std::size_t>(bench.alias[static_cast<std::size_t>(net)])]; };

    Eigen::VectorXd F(n);
    Eigen::MatrixXd J(n, n);
    auto assemble = [&](const Eigen::VectorXd& x, double gmin) {
        F.setZero();
        J.setZero();
        const auto v = voltages(x);
        auto stamp = [&](int from, int to, double i, std::initializer_list<std::pair<int, double>> partials) {
            const int rf = row(from), rt = row(to);
            if (rf >= 0) F[rf] += i;
            if (rt >= 0) F[rt] -= i;
            for (auto [net, d] : partials) {
                const int col = row(net);
                if (col < 0) continue;
                if (rf >= 0) J(rf, col) += d;
                if (rt >= 0) J(rt, col) -= d;
            }
        };
        for (const auto& m : c.mos) {
            const auto e = eval_mos(m, v[static_cast<std::size_t>(m.d)], v[static_cast<std::size_t>(m.g)],
                                    v[static_cast<std::size_t>(m.s)], mc);
            stamp(m.d, m.s, e.i, {{m.d, e.dvd}, {m.g, e.dvg}, {m.s, e.dvs}});
        }
        for (const auto& r : c.res) {
            const double g = 1.0 / r.value;
            stamp(r.a, r.b, g * (v[static_cast<std::size_t>(r.a)] - v[static_cast<std::size_t>(r.b)]), {{r.a, g}, {r.b, -g}});
        }
        for (const auto& s : c.isrc) stamp(s.a, s.b, s.value, {});
        if (gmin > 0.0)
            for (int k = 0; k < n; ++k) {
                F[k] += gmin * x[k];
                J(k, k) += gmin;
            }
    };

    DcResult res;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 0.5 * mc.supply);
    auto newton = [&](double gmin, int budget) {
        int polish = 0;
        for (int it = 0; it < budget; ++it) {
            ++res.iterations;
            assemble(x, gmin);
            Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
            if (!lu.isInvertible()) return false;
            Eigen::VectorXd dx = lu.solve(-F);
            if (!dx.allFinite()) return false;
            const double step = dx.cwiseAbs().maxCoeff();
            if (step > st.max_step) dx *= st.max_step / step;
            x += dx;
            if (step < st.tolerance) {
                // A few undamped steps take the update to round-off.
                if (step < 1e-14 || ++polish > 4) return true;
            }
        }
        return false;
    };

    if (n == 0) {
        res.converged = true;
    } else if (newton(0.0, st.max_iterations)) {
        res.converged = true;
    } else {
        x.setConstant(0.5 * mc.supply);
        bool ok = true;
        for (double gmin = 1e-3; gmin >= 1e-12 && ok; gmin *= 0.1) ok = newton(gmin, st.max_iterations);
        if (ok) {
            const Eigen::VectorXd keep = x;
            if (newton(0.0, st.max_iterations)) res.converged = true;
            else {
                x = keep;
                res.converged = newton(1e-12, st.max_iterations);
            }
        }
    }
    res.v = voltages(x);
    return res;
}

/// Current pushed into `net` by all devices at voltages v.
[[nodiscard]] inline double injected_current(const Circuit& c, const std::vector<double>& v, int net,
                                             const ModelConstants& mc) {
    double out = 0.0;  // current leaving net through devices
    for (const auto& m : c.mos) {
        if (m.d != net && m.s != net) continue;
        const double i = eval_mos(m, v[static_cast<std::size_t>(m.d)], v[static_cast<std::size_t>(m.g)],
                                  v[static_cast<std::size_t>(m.s)], mc).i;
        if (m.d == net) out += i;
        if (m.s == net) out -= i;
    }
    for (const auto& r : c.res) {
        const double i = (v[static_cast<std::size_t>(r.a)] - v[static_cast<std::size_t>(r.b)]) / r.value;
        if (r.a == net) out += i;
        if (r.b == net) out -= i;
    }
    for (const auto& s : c.isrc) {
        if (s.a == net) out += s.value;
        if (s.b == net) out -= s.value;
    }
    return -out;
}

}  // namespace mna

// -----------------------------------------------------------------------------
// DC operating point
// -----------------------------------------------------------------------------

struct DcConfig {
    std::vector<double> vcm_candidates{0.6, 0.55, 0.65, 0.5, 0.7, 0.45, 0.75, 0.4, 0.8};
    bool unity_feedback = true;
    mna::SolverSettings solver{};
};

namespace detail {

inline OperatingPoint make_op(const mna::Circuit& c, const mna::DcResult& r, double vcm, const ModelConstants& mc) {
    OperatingPoint op;
    op.converged = r.converged;
    op.iterations = r.iterations;
    op.vcm = vcm;
    for (std::size_t i = 0; i < c.nets.size(); ++i) op.voltages[c.nets[i]] = r.v[i];
    for (const auto& m : c.mos) {
        const auto e = mna::eval_mos(m, r.v[static_cast<std::size_t>(m.d)], r.v[static_cast<std::size_t>(m.g)],
                                     r.v[static_cast<std::size_t>(m.s)], mc);
        TransistorOp t;
        t.name = m.name;
        t.pmos = m.pmos;
        t.id = std::abs(e.i);
        t.gm = e.gm;
        t.gds = e.gds;
        t.ro = e.gds > 0 ? 1.0 / e.gds : std::numeric_limits<double>::infinity();
        t.vov = e.vov;
        t.vds = e.vds;
        t.region = e.region;
        op.transistors.push_back(std::move(t));
    }
    op.supply_current = -mna::injected_current(c, r.v, c.net("vdd"), mc);
    return op;
}

inline mna::Bench quiescent_bench(const mna::Circuit& c, double vcm, bool feedback, const ModelConstants& mc) {
    mna::Bench b(c.nets.size());
    if (feedback) b.merge(c.net("inn"), c.net("out"));
    b.fix(c.net("0"), 0.0);
    b.fix(c.net("vdd"), mc.supply);
    b.fix(c.net("inp"), vcm);
    if (!feedback) b.fix(c.net("inn"), vcm);
    return b;
}

}  // namespace detail

/// Operating point at one input common-mode voltage.
[[nodiscard]] inline OperatingPoint solve_dc_at(const Netlist& nl, double vcm, const ModelConstants& mc = {},
                                                const DcConfig& cfg = {}) {
    const auto c = mna::compile(nl, mc);
    const auto r = mna::solve(c, detail::quiescent_bench(c, vcm, cfg.unity_feedback, mc), mc, cfg.solver);
    return detail::make_op(c, r, vcm, mc);
}

/// Operating point with the input common mode searched for an all-saturated point.
[[nodiscard]] inline OperatingPoint solve_dc(const Netlist& nl, const ModelConstants& mc = {}, const DcConfig& cfg = {}) {
    const auto c = mna::compile(nl, mc);
    std::optional<OperatingPoint> first;
    for (double vcm : cfg.vcm_candidates) {
        const auto r = mna::solve(c, detail::quiescent_bench(c, vcm, cfg.unity_feedback, mc), mc, cfg.solver);
        auto op = detail::make_op(c, r, vcm, mc);
        if (!op.converged) continue;
        if (op.all_saturated()) return op;
        if (!first) first = std::move(op);
    }
    if (first) return *first;
    const auto r = mna::solve(c, detail::quiescent_bench(c, cfg.vcm_candidates.front(), cfg.unity_feedback, mc), mc,
                              cfg.solver);
    return detail::make_op(c, r, cfg.vcm_candidates.front(), mc);
}

// -----------------------------------------------------------------------------
// Small-signal analysis
// -----------------------------------------------------------------------------

namespace mna {

/// Linearized network around an operating point. Source nets (rails, inputs) are excitations.
struct SmallSignal {
    int n = 0;
    std::vector<int> unk;          // net -> unknown index or -1
    Eigen::MatrixXd G, C;          // unknown x unknown
    Eigen::MatrixXd Gs, Cs;        // unknown x net, coupling to source nets
    int out = -1;                  // unknown index of out

    [[nodiscard]] Eigen::VectorXcd rhs(const Eigen::VectorXd& u, double omega) const {
        return -(Gs.cast<std::complex<double>>() + std::complex<double>(0, omega) * Cs.cast<std::complex<double>>()) *
               u.cast<std::complex<double>>();
    }
};

[[nodiscard]] inline SmallSignal linearize(const Circuit& c, const std::vector<double>& v, double cl,
                                           const ModelConstants& mc) {
    SmallSignal ss;
    const std::size_t nn = c.nets.size();
    ss.unk.assign(nn, -1);
    for (std::size_t i = 0; i < nn; ++i) {
        const auto& name = c.nets[i];
        if (name == "0" || name == "vdd" || name == "inp" || name == "inn") continue;
        ss.unk[i] = ss.n++;
    }
    ss.G = Eigen::MatrixXd::Zero(ss.n, ss.n);
    ss.C = Eigen::MatrixXd::Zero(ss.n, ss.n);
    ss.Gs = Eigen::MatrixXd::Zero(ss.n, static_cast<Eigen::Index>(nn));
    ss.Cs = Eigen::MatrixXd::Zero(ss.n, static_cast<Eigen::Index>(nn));
    ss.out = ss.unk[static_cast<std::size_t>(c.net("out"))];

    auto add = [&](Eigen::MatrixXd& M, Eigen::MatrixXd& Ms, int r, int net, double val) {
        const int row = ss.unk[static_cast<std::size_t>(r)];
        if (row < 0) return;
        const int col = ss.unk[static_cast<std::size_t>(net)];
        if (col >= 0) M(row, col) += val;
        else Ms(row, net) += val;
    };
    // Current i = sum_k d_k v_k flows from `from` to `to`.
    auto transfer = [&](int from, int to, std::initializer_list<std::pair<int, double>> partials) {
        for (auto [net, d] : partials) {
            add(ss.G, ss.Gs, from, net, d);
            add(ss.G, ss.Gs, to, net, -d);
        }
    };
    auto admittance = [&](Eigen::MatrixXd& M, Eigen::MatrixXd& Ms, int a, int b, double y) {
        add(M, Ms, a, a, y);
        add(M, Ms, a, b, -y);
        add(M, Ms, b, b, y);
        add(M, Ms, b, a, -y);
    };
    for (const auto& m : c.mos) {
        const auto e = eval_mos(m, v[static_cast<std::size_t>(m.d)], v[static_cast<std::size_t>(m.g)],
                                v[static_cast<std::size_t>(m.s)], mc);
        transfer(m.d, m.s, {{m.d, e.dvd}, {m.g, e.dvg}, {m.s, e.dvs}});
        const double cgs = 2.0 / 3.0 * m.w * m.l * mc.cox;
        const double cgd = mc.cov * m.w;
        const double cjx = mc.cj * m.w;
        admittance(ss.C, ss.Cs, m.g, m.s, cgs);
        admittance(ss.C, ss.Cs, m.g, m.d, cgd);
        admittance(ss.C, ss.Cs, m.d, 0, cjx);
        admittance(ss.C, ss.Cs, m.s, 0, cjx);
    }
    for (const auto& r : c.res) admittance(ss.G, ss.Gs, r.a, r.b, 1.0 / r.value);
    for (const auto& cap : c.cap) admittance(ss.C, ss.Cs, cap.a, cap.b, cap.value);
    if (ss.out >= 0) ss.C(ss.out, ss.out) += cl;
    return ss;
}

}  // namespace mna

// -----------------------------------------------------------------------------
// Evaluation
// -----------------------------------------------------------------------------

struct Evaluation {
    MetricsVector metrics{};
    bool valid = false;
    std::string reason;  // first failed validity condition, empty when valid
    OperatingPoint op;
};

struct EvalConfig {
    DcConfig dc{};
    double slew_drive = 0.5;       // V of differential overdrive for clamp solves
    double f_start = 1.0;          // Hz
    double f_stop = 1e12;          // Hz
    int points_per_decade = 10;
    double max_db = 200.0;         // cap for rejection ratios
};

namespace detail {

inline double db20(double x) { return 20.0 * std::log10(x); }

/// Sum of Vov along the cheapest channel path from `from` to `to`.
inline std::optional<double> headroom(const mna::Circuit& c, const std::vector<double>& v, int from, int to,
                                      const ModelConstants& mc) {
    const std::size_t nn = c.nets.size();
    std::vector<std::vector<std::pair<int, double>>> adj(nn);
    for (const auto& m : c.mos) {
        const auto e = mna::eval_mos(m, v[static_cast<std::size_t>(m.d)], v[static_cast<std::size_t>(m.g)],
                                     v[static_cast<std::size_t>(m.s)], mc);
        const double w = std::max(e.vov, 0.0);
        adj[static_cast<std::size_t>(m.d)].push_back({m.s, w});
        adj[static_cast<std::size_t>(m.s)].push_back({m.d, w});
    }
    for (const auto& r : c.res) {
        const double w = std::abs(v[static_cast<std::size_t>(r.a)] - v[static_cast<std::size_t>(r.b)]);
        adj[static_cast<std::size_t>(r.a)].push_back({r.b, w});
        adj[static_cast<std::size_t>(r.b)].push_back({r.a, w});
    }
    std::vector<double> dist(nn, std::numeric_limits<double>::infinity());
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[static_cast<std::size_t>(from)] = 0.0;
    pq.push({0.0, from});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[static_cast<std::size_t>(u)]) continue;
        if (u == to) return d;
        for (auto [w, cost] : adj[static_cast<std::size_t>(u)]) {
            if (d + cost < dist[static_cast<std::size_t>(w)]) {
                dist[static_cast<std::size_t>(w)] = d + cost;
                pq.push({d + cost, w});
            }
        }
    }
    return std::nullopt;
}

}  // namespace detail

/// All 13 metrics plus the validity flag. Metrics stay zero when the DC solve fails.
[[nodiscard]] inline Evaluation evaluate(const Netlist& nl, double cl, const ModelConstants& mc = {},
                                         const EvalConfig& cfg = {}) {
    Evaluation ev;
    auto& M = ev.metrics;
    auto fail = [&](std::string why) {
        if (ev.reason.empty()) ev.reason = std::move(why);
        ev.valid = false;
    };
    for (const char* pin : {"vdd", "0", "inp", "inn", "out"})
        if (!nl.nets.contains(pin)) {
            fail(std::string("missing net ") + pin);
            return ev;
        }

    const auto c = mna::compile(nl, mc);
    ev.op = solve_dc(nl, mc, cfg.dc);
    if (!ev.op.converged) {
        fail("dc did not converge");
        return ev;
    }
    ev.valid = true;
    const double vcm = ev.op.vcm;
    std::vector<double> v(c.nets.size());
    for (std::size_t i = 0; i < c.nets.size(); ++i) v[i] = ev.op.voltages.at(c.nets[i]);

    M[idx(Metric::CL)] = cl;
    M[idx(Metric::Pdiss)] = mc.supply * ev.op.supply_current;
    for (const auto& t : ev.op.transistors)
        if (t.region != Region::Saturation) {
            fail(t.name + " not in saturation");
            break;
        }
    for (const auto& [name, volt] : ev.op.voltages)
        if (volt < -mc.rail_margin || volt > mc.supply + mc.rail_margin) {
            fail("net " + name + " outside the rails");
            break;
        }

    // Output swing from channel headroom.
    const int out = c.net("out");
    const double vout = v[static_cast<std::size_t>(out)];
    const auto up = detail::headroom(c, v, out, c.net("vdd"), mc);
    const auto down = detail::headroom(c, v, out, c.net("0"), mc);
    M[idx(Metric::VOH)] = up ? mc.supply - *up : vout;
    M[idx(Metric::VOL)] = down ? *down : vout;

    // Frequency response.
    const auto ss = mna::linearize(c, v, cl, mc);
    const Eigen::Index nn = static_cast<Eigen::Index>(c.nets.size());
    Eigen::VectorXd u_dm = Eigen::VectorXd::Zero(nn), u_cm = u_dm, u_dd = u_dm;
    u_dm[c.net("inp")] = 0.5;
    u_dm[c.net("inn")] = -0.5;
    u_cm[c.net("inp")] = 1.0;
    u_cm[c.net("inn")] = 1.0;
    u_dd[c.net("vdd")] = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu0(ss.G);
    if (ss.n == 0 || !lu0.isInvertible()) {
        fail("singular small-signal network");
        return ev;
    }
    auto dc_gain = [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd x = lu0.solve(-(ss.Gs * u));
        return x[ss.out];
    };
    const double a0 = dc_gain(u_dm);
    const double acm = std::abs(dc_gain(u_cm));
    const double add = std::abs(dc_gain(u_dd));
    if (!(a0 > 1.0)) fail("no positive gain");
    M[idx(Metric::GainDC)] = a0 > 0 ? detail::db20(a0) : 0.0;
    const double adm = std::abs(a0);
    M[idx(Metric::CMRR)] = acm > 0 ? std::min(detail::db20(adm / acm), cfg.max_db) : cfg.max_db;
    M[idx(Metric::PSRR)] = add > 0 ? std::min(detail::db20(adm / add), cfg.max_db) : cfg.max_db;

    if (a0 > 1.0) {
        auto response = [&](double f) {
            const double w = 2.0 * std::numbers::pi * f;
            const Eigen::MatrixXcd Y = ss.G.cast<std::complex<double>>() + std::complex<double>(0, w) * ss.C.cast<std::complex<double>>();
            const Eigen::VectorXcd x = Y.partialPivLu().solve(ss.rhs(u_dm, w));
            return x[ss.out];
        };
        const int decades = static_cast<int>(std::round(std::log10(cfg.f_stop / cfg.f_start)));
        const int count = decades * cfg.points_per_decade;
        double prev_f = cfg.f_start, prev_phase = std::arg(response(prev_f));
        if (std::abs(prev_phase) > std::numbers::pi / 2) fail("inverted low-frequency phase");
        std::optional<double> ugf, phase_at;
        for (int k = 1; k <= count && !ugf; ++k) {
            const double f = cfg.f_start * std::pow(10.0, static_cast<double>(k) / cfg.points_per_decade);
            const auto h = response(f);
            double ph = std::arg(h);
            while (ph - prev_phase > std::numbers::pi) ph -= 2 * std::numbers::pi;
            while (ph - prev_phase < -std::numbers::pi) ph += 2 * std::numbers::pi;
            if (std::abs(h) < 1.0) {
                double lo = std::log10(prev_f), hi = std::log10(f);
                for (int b = 0; b < 60; ++b) {
                    const double mid = 0.5 * (lo + hi);
                    (std::abs(response(std::pow(10.0, mid))) >= 1.0 ? lo : hi) = mid;
                }
                const double fu = std::pow(10.0, 0.5 * (lo + hi));
                double pu = std::arg(response(fu));
                while (pu - prev_phase > std::numbers::pi) pu -= 2 * std::numbers::pi;
                while (pu - prev_phase < -std::numbers::pi) pu += 2 * std::numbers::pi;
                ugf = fu;
                phase_at = pu;
            }
            prev_f = f;
            prev_phase = ph;
        }
        if (!ugf) {
            fail("no unity-gain crossing");
        } else {
            M[idx(Metric::GBW)] = *ugf;
            const double pm = 180.0 + *phase_at * 180.0 / std::numbers::pi;
            if (pm <= 0.0) fail("non-positive phase margin");
            M[idx(Metric::PM)] = std::clamp(pm, 0.0, 180.0);
        }

        // Input-referred noise through the DC adjoint.
        const Eigen::VectorXd e_out = Eigen::VectorXd::Unit(ss.n, ss.out);
        const Eigen::VectorXd z = ss.G.transpose().fullPivLu().solve(e_out);
        auto zt = [&](int net) {
            const int k = ss.unk[static_cast<std::size_t>(net)];
            return k >= 0 ? z[k] : 0.0;
        };
        const double kt4 = 4.0 * kBoltzmann * mc.temperature;
        for (auto [f, metric] : {std::pair{1e3, Metric::Noise1k}, std::pair{1e9, Metric::Noise1G}}) {
            double s_out = 0.0;
            for (const auto& m : c.mos) {
                const auto e = mna::eval_mos(m, v[static_cast<std::size_t>(m.d)], v[static_cast<std::size_t>(m.g)],
                                             v[static_cast<std::size_t>(m.s)], mc);
                const double s = kt4 * mc.gamma * e.gm + mc.kf * e.gm * e.gm / (mc.cox * m.w * m.l * f);
                const double h = zt(m.d) - zt(m.s);
                s_out += h * h * s;
            }
            for (const auto& r : c.res) {
                const double h = zt(r.a) - zt(r.b);
                s_out += h * h * kt4 / r.value;
            }
            M[idx(metric)] = std::sqrt(s_out) / adm;
        }
    }

    // Slew: output held at its quiescent voltage under a large differential drive.
    double c_out = cl;
    std::vector<std::pair<int, double>> miller;  // (node driving the cap, capacitance)
    for (const auto& cap : c.cap) {
        if (cap.a != out && cap.b != out) continue;
        c_out += cap.value;
        int other = cap.a == out ? cap.b : cap.a;
        if (c.nets[static_cast<std::size_t>(other)] == "0" || c.nets[static_cast<std::size_t>(other)] == "vdd") continue;
        for (const auto& r : c.res)
            if (r.a == other || r.b == other) {
                other = r.a == other ? r.b : r.a;
                break;
            }
        miller.push_back({other, cap.value});
    }
    auto clamp_solve = [&](double dir, const std::vector<int>& held) {
        mna::Bench b(c.nets.size());
        b.fix(c.net("0"), 0.0);
        b.fix(c.net("vdd"), mc.supply);
        b.fix(c.net("inn"), vcm);
        b.fix(c.net("inp"), std::clamp(vcm + dir * cfg.slew_drive, 0.0, mc.supply));
        for (int h : held) b.fix(h, v[static_cast<std::size_t>(h)]);
        return mna::solve(c, b, mc, cfg.dc.solver);
    };
    for (auto [dir, metric] : {std::pair{1.0, Metric::SRp}, std::pair{-1.0, Metric::SRn}}) {
        const auto r = clamp_solve(dir, {out});
        double sr = 0.0;
        if (r.converged) sr = std::max(dir * mna::injected_current(c, r.v, out, mc), 0.0) / c_out;
        for (auto [x, cc] : miller) {
            const auto rx = clamp_solve(dir, {out, x});
            const double ix = rx.converged ? std::abs(mna::injected_current(c, rx.v, x, mc)) : 0.0;
            sr = std::min(sr, ix / cc);
        }
        M[idx(metric)] = sr;
    }
    return ev;
}

/// Operating point and metrics as CSV rows.
inline void write_op_csv(std::ostream& os, const Evaluation& ev) {
    os << "section,name,field,value\n";
    os << "op,dc,converged," << (ev.op.converged ? 1 : 0) << '\n';
    os << "op,dc,vcm," << ev.op.vcm << '\n';
    os << "op,dc,supply_current," << ev.op.supply_current << '\n';
    for (const auto& [net, v] : ev.op.voltages) os << "net," << net << ",voltage," << v << '\n';
    for (const auto& t : ev.op.transistors) {
        os << "mos," << t.name << ",id," << t.id << '\n';
        os << "mos," << t.name << ",gm," << t.gm << '\n';
        os << "mos," << t.name << ",ro," << t.ro << '\n';
        os << "mos," << t.name << ",vov," << t.vov << '\n';
        os << "mos," << t.name << ",region," << region_name(t.region) << '\n';
    }
    for (std::size_t i = 0; i < kMetricCount; ++i)
        os << "metric," << metric_name(static_cast<Metric>(i)) << ",value," << ev.metrics[i] << '\n';
    os << "metric,valid,value," << (ev.valid ? 1 : 0) << '\n';
    if (!ev.reason.empty()) os << "metric,reason,value," << ev.reason << '\n';
}

}  // namespace cktdiffuse
