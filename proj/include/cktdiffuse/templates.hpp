#pragma once

// Composite-block expansion (graph -> netlist) and the amplifier template library.

#include "graph.hpp"
#include "netlist.hpp"

#include <functional>

namespace cktdiffuse {

inline constexpr double kDefaultBiasCurrent = 20e-6;

class InvalidGraphError : public std::runtime_error {
public:
    explicit InvalidGraphError(ValidationReport report)
        : std::runtime_error("invalid circuit graph:\n" + to_string(report)), report_(std::move(report)) {}

    [[nodiscard]] const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

/// Deterministic net names: pins and rails by role, others from the lowest (node, port) member.
[[nodiscard]] inline std::vector<std::string> net_names(const CircuitGraph& g, const NetMap& nets) {
    std::vector<std::string> names(nets.count());
    for (std::size_t net = 0; net < nets.count(); ++net) {
        if (!nets.labels[net].empty()) {
            switch (nets.labels[net].front()) {
                case NetLabel::Vdd: names[net] = "vdd"; continue;
                case NetLabel::Vss: names[net] = "0"; continue;
                case NetLabel::Inp: names[net] = "inp"; continue;
                case NetLabel::Inn: names[net] = "inn"; continue;
                case NetLabel::Out: names[net] = "out"; continue;
                case NetLabel::Ibias: names[net] = "ibias"; continue;
                case NetLabel::Internal: break;
            }
        }
        const std::size_t slot = nets.members[net].front();
        const auto& info = kind_info(g.node(slot / kMaxPorts).kind);
        names[net] = "n" + std::to_string(slot / kMaxPorts) + "_" + detail::lower(info.ports[slot % kMaxPorts].name);
    }
    return names;
}

/// Expand composite blocks into transistor-level cards. Throws InvalidGraphError when the graph
/// has any violation other than a missing pin binding (partial circuits still expand).
[[nodiscard]] inline Netlist expand(const CircuitGraph& g) {
    auto report = validate(g);
    std::erase_if(report, [](const Violation& v) { return v.kind == ViolationKind::MissingBinding; });
    if (!report.empty()) throw InvalidGraphError(std::move(report));
    const NetMap nets = build_nets(g);
    const auto names = net_names(g, nets);
    auto net = [&](std::size_t node, std::size_t p) { return names[nets.net_of(node, p)]; };

    Netlist nl;
    nl.graph_hash = graph_hash(g);
    auto mos = [&](std::string name, std::string d, std::string gt, std::string s, Polarity pol, const ParamVector& p) {
        Card c;
        c.name = std::move(name);
        c.type = 'M';
        c.model = pol == Polarity::P ? "pmos" : "nmos";
        c.terminals = {std::move(d), std::move(gt), std::move(s), pol == Polarity::P ? "vdd" : "0"};
        c.params["W"] = denormalize_param(p[0], ranges::Width);
        c.params["L"] = denormalize_param(p[1], ranges::Length);
        c.params["M"] = std::round(denormalize_param(p[2], ranges::Multiplier));
        nl.cards.push_back(std::move(c));
    };
    auto two_terminal = [&](char type, std::size_t i, double value) {
        Card c;
        c.type = type;
        c.name = std::string(1, type) + std::to_string(i);
        c.terminals = {net(i, port::P), net(i, port::N)};
        c.params["value"] = value;
        nl.cards.push_back(std::move(c));
    };

    for (std::size_t i = 0; i < g.size(); ++i) {
        const Node& nd = g.node(i);
        const Polarity pol = kind_info(nd.kind).polarity;
        const std::string id = std::to_string(i);
        switch (nd.kind) {
            case DeviceKind::Nmos:
            case DeviceKind::Pmos:
                mos("M" + id, net(i, port::Drain), net(i, port::Gate), net(i, port::Source), pol, nd.params);
                break;
            case DeviceKind::NmosDiffPair:
            case DeviceKind::PmosDiffPair:
                mos("M" + id + "A", net(i, port::OutP), net(i, port::InP), net(i, port::Tail), pol, nd.params);
                mos("M" + id + "B", net(i, port::OutN), net(i, port::InN), net(i, port::Tail), pol, nd.params);
                break;
            case DeviceKind::NmosCurrentMirror:
            case DeviceKind::PmosCurrentMirror:
                mos("M" + id + "A", net(i, port::In), net(i, port::In), net(i, port::SupplyA), pol, nd.params);
                mos("M" + id + "B", net(i, port::Out), net(i, port::In), net(i, port::SupplyB), pol, nd.params);
                break;
            case DeviceKind::Resistor:
            case DeviceKind::Capacitor:
            case DeviceKind::BiasCurrent:
                two_terminal(nd.kind == DeviceKind::Resistor ? 'R' : nd.kind == DeviceKind::Capacitor ? 'C' : 'I', i,
                             denormalize_param(nd.params[0], param_ranges(nd.kind)[0]));
                break;
        }
    }
    if (g.io().contains(Pin::Ibias)) {
        Card c;
        c.name = "IBIAS";
        c.type = 'I';
        c.terminals = {"vdd", "ibias"};
        c.params["value"] = kDefaultBiasCurrent;
        nl.cards.push_back(std::move(c));
    }
    for (const auto& c : nl.cards)
        for (const auto& t : c.terminals) nl.nets.insert(t);
    return nl;
}

// -----------------------------------------------------------------------------
// Template library
// -----------------------------------------------------------------------------

enum class StageConfig : std::uint8_t { Single, Miller, MillerRz };
inline constexpr std::array<StageConfig, 3> kStageConfigs{StageConfig::Single, StageConfig::Miller, StageConfig::MillerRz};

[[nodiscard]] constexpr std::string_view stage_config_name(StageConfig c) {
    constexpr std::array<std::string_view, 3> names{"1s", "2s", "2sr"};
    return names[static_cast<std::size_t>(c)];
}

struct TopologyTemplate {
    std::string id;
    std::function<CircuitGraph(StageConfig)> builder;

    [[nodiscard]] static constexpr int stage_count(StageConfig c) { return c == StageConfig::Single ? 1 : 2; }
};

namespace detail {

struct CellPorts {
    PortRef out;            // first-stage output
    PortRef in_noninv;      // input that moves the first-stage output in the same direction
    PortRef in_inv;
    PortRef second_bias;    // gate net for the second-stage load, or a node port on it
    bool n_input = true;
    bool inverting = false; // first-stage output falls when in_noninv rises
};

/// Append a common-source second stage with optional Miller compensation and bind the pins.
inline void finish(CircuitGraph& g, const CellPorts& c, StageConfig cfg) {
    if (cfg == StageConfig::Single) {
        const bool swap = c.inverting;
        const PortRef inp = swap ? c.in_inv : c.in_noninv, inn = swap ? c.in_noninv : c.in_inv;
        g.bind(Pin::Inp, inp.node, inp.port);
        g.bind(Pin::Inn, inn.node, inn.port);
        g.bind(Pin::Out, c.out.node, c.out.port);
        return;
    }
    // NMOS-input cells drive a PMOS common source; PMOS-input cells drive an NMOS one.
    const DeviceKind driver = c.n_input ? DeviceKind::Pmos : DeviceKind::Nmos;
    const DeviceKind load = c.n_input ? DeviceKind::Nmos : DeviceKind::Pmos;
    const std::size_t m2 = g.add_node({driver, mos_params(40e-6, 0.5e-6)});
    const std::size_t m3 = g.add_node({load, mos_params(20e-6, 1e-6)});
    g.connect(m2, port::Gate, c.out.node, c.out.port);
    g.connect(m3, port::Drain, m2, port::Drain);
    g.connect(m3, port::Gate, c.second_bias.node, c.second_bias.port);
    const std::size_t cc = g.add_node({DeviceKind::Capacitor, value_params(DeviceKind::Capacitor, 2e-12)});
    g.connect(cc, port::N, m2, port::Drain);
    if (cfg == StageConfig::MillerRz) {
        const std::size_t rz = g.add_node({DeviceKind::Resistor, value_params(DeviceKind::Resistor, 5e3)});
        g.connect(rz, port::P, c.out.node, c.out.port);
        g.connect(rz, port::N, cc, port::P);
    } else {
        g.connect(cc, port::P, c.out.node, c.out.port);
    }
    // The second stage inverts.
    const bool swap = !c.inverting;
    const PortRef inp = swap ? c.in_inv : c.in_noninv, inn = swap ? c.in_noninv : c.in_inv;
    g.bind(Pin::Inp, inp.node, inp.port);
    g.bind(Pin::Inn, inn.node, inn.port);
    g.bind(Pin::Out, m2, port::Drain);
}

inline CircuitGraph nmos_five_t(StageConfig cfg) {
    CircuitGraph g = make_five_t_ota();
    g.io().erase(Pin::Inp);
    g.io().erase(Pin::Inn);
    g.io().erase(Pin::Out);
    finish(g, {{0, port::OutN}, {0, port::InP}, {0, port::InN}, {2, port::Gate}, true, false}, cfg);
    return g;
}

inline CircuitGraph pmos_five_t(StageConfig cfg) {
    CircuitGraph g({
        Node{DeviceKind::PmosDiffPair, mos_params(20e-6, 0.5e-6)},
        Node{DeviceKind::NmosCurrentMirror, mos_params(4e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(10e-6, 1e-6)},
        Node{DeviceKind::BiasCurrent, value_params(DeviceKind::BiasCurrent, 20e-6)},
    });
    g.connect(0, port::OutP, 1, port::In);
    g.connect(0, port::OutN, 1, port::Out);
    g.connect(0, port::Tail, 2, port::Out);
    g.connect(3, port::P, 2, port::In);
    g.bind(Pin::Vdd, 2, port::SupplyA);
    g.bind(Pin::Vss, 1, port::SupplyA);
    finish(g, {{0, port::OutN}, {0, port::InP}, {0, port::InN}, {2, port::In}, false, false}, cfg);
    return g;
}

inline CircuitGraph nmos_mirror_ota(StageConfig cfg) {
    CircuitGraph g({
        Node{DeviceKind::NmosDiffPair, mos_params(10e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(6e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(6e-6, 0.5e-6)},
        Node{DeviceKind::NmosCurrentMirror, mos_params(3e-6, 0.5e-6)},
        Node{DeviceKind::Nmos, mos_params(8e-6, 1e-6)},
    });
    g.connect(0, port::OutP, 1, port::In);
    g.connect(0, port::OutN, 2, port::In);
    g.connect(1, port::Out, 3, port::In);
    g.connect(2, port::Out, 3, port::Out);
    g.connect(0, port::Tail, 4, port::Drain);
    g.bind(Pin::Vdd, 1, port::SupplyA);
    g.bind(Pin::Vss, 4, port::Source);
    g.bind(Pin::Ibias, 4, port::Gate);
    finish(g, {{2, port::Out}, {0, port::InP}, {0, port::InN}, {4, port::Gate}, true, true}, cfg);
    return g;
}

inline CircuitGraph pmos_mirror_ota(StageConfig cfg) {
    CircuitGraph g({
        Node{DeviceKind::PmosDiffPair, mos_params(20e-6, 0.5e-6)},
        Node{DeviceKind::NmosCurrentMirror, mos_params(3e-6, 0.5e-6)},
        Node{DeviceKind::NmosCurrentMirror, mos_params(3e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(6e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(10e-6, 1e-6)},
        Node{DeviceKind::BiasCurrent, value_params(DeviceKind::BiasCurrent, 20e-6)},
    });
    g.connect(0, port::OutP, 1, port::In);
    g.connect(0, port::OutN, 2, port::In);
    g.connect(1, port::Out, 3, port::In);
    g.connect(2, port::Out, 3, port::Out);
    g.connect(0, port::Tail, 4, port::Out);
    g.connect(5, port::P, 4, port::In);
    g.bind(Pin::Vdd, 4, port::SupplyA);
    g.bind(Pin::Vss, 1, port::SupplyA);
    finish(g, {{2, port::Out}, {0, port::InP}, {0, port::InN}, {4, port::In}, false, true}, cfg);
    return g;
}

}  // namespace detail

/// Built-in templates: four single-stage cells, each with three stage configurations.
[[nodiscard]] inline const std::vector<TopologyTemplate>& template_library() {
    static const std::vector<TopologyTemplate> lib{
        {"nmos5t", detail::nmos_five_t},
        {"pmos5t", detail::pmos_five_t},
        {"nmos_cmota", detail::nmos_mirror_ota},
        {"pmos_cmota", detail::pmos_mirror_ota},
    };
    return lib;
}

[[nodiscard]] inline const TopologyTemplate& find_template(std::string_view id) {
    for (const auto& t : template_library())
        if (t.id == id) return t;
    throw std::invalid_argument("unknown template: " + std::string(id));
}

/// A template together with the stage configurations it may be sampled with.
struct TemplateChoice {
    const TopologyTemplate* tmpl;
    std::vector<StageConfig> configs;
};

/// Parse "nmos5t" (all configs) or "nmos5t:2s" (one config); "all" selects the full library.
[[nodiscard]] inline std::vector<TemplateChoice> parse_template_set(const std::vector<std::string>& specs) {
    std::vector<TemplateChoice> out;
    for (const auto& s : specs) {
        if (s == "all") {
            for (const auto& t : template_library()) out.push_back({&t, {kStageConfigs.begin(), kStageConfigs.end()}});
            continue;
        }
        const auto colon = s.find(':');
        const auto& t = find_template(s.substr(0, colon));
        if (colon == std::string::npos) {
            out.push_back({&t, {kStageConfigs.begin(), kStageConfigs.end()}});
            continue;
        }
        const std::string cfg = s.substr(colon + 1);
        bool found = false;
        for (StageConfig c : kStageConfigs)
            if (stage_config_name(c) == cfg) {
                out.push_back({&t, {c}});
                found = true;
            }
        if (!found) throw std::invalid_argument("unknown stage configuration: " + cfg);
    }
    if (out.empty()) throw std::invalid_argument("empty template set");
    return out;
}

struct SampledStructure {
    CircuitGraph graph;
    std::string template_id;  // "<cell>:<config>"
};

/// Uniform template, then uniform stage configuration within it.
[[nodiscard]] inline SampledStructure sample_structure(Rng& rng, const std::vector<TemplateChoice>& set) {
    if (set.empty()) throw std::invalid_argument("empty template set");
    const auto& choice = set[rng.index(set.size())];
    const StageConfig cfg = choice.configs[rng.index(choice.configs.size())];
    return {choice.tmpl->builder(cfg), choice.tmpl->id + ":" + std::string(stage_config_name(cfg))};
}

/// Every (template, config) structure in the library, in library order.
[[nodiscard]] inline std::vector<SampledStructure> all_structures() {
    std::vector<SampledStructure> out;
    for (const auto& t : template_library())
        for (StageConfig c : kStageConfigs) out.push_back({t.builder(c), t.id + ":" + std::string(stage_config_name(c))});
    return out;
}

}  // namespace cktdiffuse
