#pragma once

// =============================================================================
// cktdiffuse - circuit graph data model
// =============================================================================
// Devices and composite blocks are nodes; every node pair carries a k x k
// port-connection matrix xi. Node parameters are log-normalized into [0,1].
// =============================================================================

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "random.hpp"

namespace cktdiffuse {

inline constexpr std::size_t kMaxPorts = 5;    // k
inline constexpr std::size_t kKindCount = 9;   // a
inline constexpr std::size_t kParamCount = 4;  // b

enum class DeviceKind : std::uint8_t {
    Nmos,
    Pmos,
    NmosDiffPair,
    PmosDiffPair,
    NmosCurrentMirror,
    PmosCurrentMirror,
    Resistor,
    Capacitor,
    BiasCurrent,
};

enum class Polarity : std::uint8_t { None, N, P };

/// Electrical role of a port, used by expansion and by the validator.
enum class PortRole : std::uint8_t {
    Drain, Gate, Source, Bulk,
    OutP, OutN, InP, InN, Tail,
    SupplyA, SupplyB, In, Out,
    Plus, Minus,
};

/// What an unconnected, unbound port resolves to.
enum class PortTie : std::uint8_t {
    Required,       // must be connected or bound
    PolarityRail,   // VSS for N devices, VDD for P devices
    Vdd,
    Vss,
};

struct PortSpec {
    std::string_view name;
    PortRole role;
    PortTie tie;
};

struct KindInfo {
    std::string_view name;
    Polarity polarity;
    std::span<const PortSpec> ports;
};

namespace detail {

inline constexpr std::array<PortSpec, 4> kMosPorts{{
    {"Drain", PortRole::Drain, PortTie::Required},
    {"Gate", PortRole::Gate, PortTie::Required},
    {"Source", PortRole::Source, PortTie::PolarityRail},
    {"Bulk", PortRole::Bulk, PortTie::PolarityRail},
}};

inline constexpr std::array<PortSpec, 5> kDiffPairPorts{{
    {"OutP", PortRole::OutP, PortTie::Required},
    {"OutN", PortRole::OutN, PortTie::Required},
    {"InP", PortRole::InP, PortTie::Required},
    {"InN", PortRole::InN, PortTie::Required},
    {"Tail", PortRole::Tail, PortTie::Required},
}};

inline constexpr std::array<PortSpec, 4> kMirrorPorts{{
    {"SupplyA", PortRole::SupplyA, PortTie::PolarityRail},
    {"SupplyB", PortRole::SupplyB, PortTie::PolarityRail},
    {"IN", PortRole::In, PortTie::Required},
    {"OUT", PortRole::Out, PortTie::Required},
}};

inline constexpr std::array<PortSpec, 2> kPassivePorts{{
    {"P", PortRole::Plus, PortTie::Required},
    {"N", PortRole::Minus, PortTie::Vss},
}};

inline constexpr std::array<PortSpec, 2> kCurrentSourcePorts{{
    {"P", PortRole::Plus, PortTie::Vdd},
    {"N", PortRole::Minus, PortTie::Vss},
}};

inline constexpr std::array<KindInfo, kKindCount> kKinds{{
    {"NMOS", Polarity::N, kMosPorts},
    {"PMOS", Polarity::P, kMosPorts},
    {"NMOS_DIFF_PAIR", Polarity::N, kDiffPairPorts},
    {"PMOS_DIFF_PAIR", Polarity::P, kDiffPairPorts},
    {"NMOS_CURRENT_MIRROR", Polarity::N, kMirrorPorts},
    {"PMOS_CURRENT_MIRROR", Polarity::P, kMirrorPorts},
    {"RESISTOR", Polarity::None, kPassivePorts},
    {"CAPACITOR", Polarity::None, kPassivePorts},
    {"BIAS_CURRENT", Polarity::None, kCurrentSourcePorts},
}};

}  // namespace detail

[[nodiscard]] constexpr const KindInfo& kind_info(DeviceKind k) {
    return detail::kKinds[static_cast<std::size_t>(k)];
}
[[nodiscard]] constexpr std::size_t port_count(DeviceKind k) { return kind_info(k).ports.size(); }
[[nodiscard]] constexpr std::size_t kind_index(DeviceKind k) { return static_cast<std::size_t>(k); }
[[nodiscard]] constexpr DeviceKind kind_from_index(std::size_t i) { return static_cast<DeviceKind>(i); }
[[nodiscard]] constexpr bool is_transistor_kind(DeviceKind k) { return kind_index(k) <= kind_index(DeviceKind::PmosCurrentMirror); }

[[nodiscard]] inline DeviceKind kind_from_name(std::string_view name) {
    for (std::size_t i = 0; i < kKindCount; ++i) {
        if (detail::kKinds[i].name == name) return kind_from_index(i);
    }
    throw std::invalid_argument("unknown device kind: " + std::string(name));
}

/// Port indices per kind (0-based).
namespace port {
inline constexpr std::size_t Drain = 0, Gate = 1, Source = 2, Bulk = 3;
inline constexpr std::size_t OutP = 0, OutN = 1, InP = 2, InN = 3, Tail = 4;
inline constexpr std::size_t SupplyA = 0, SupplyB = 1, In = 2, Out = 3;
inline constexpr std::size_t P = 0, N = 1;
}  // namespace port

// -----------------------------------------------------------------------------
// Parameter normalization
// -----------------------------------------------------------------------------

struct ParamRange {
    double lo;
    double hi;
};

namespace ranges {
inline constexpr ParamRange Width{0.2e-6, 200e-6};
inline constexpr ParamRange Length{60e-9, 10e-6};
inline constexpr ParamRange Multiplier{1.0, 16.0};
inline constexpr ParamRange Capacitance{10e-15, 20e-12};
inline constexpr ParamRange Resistance{100.0, 1e6};
inline constexpr ParamRange Current{1e-6, 1e-3};
}  // namespace ranges

[[nodiscard]] inline double normalize_param(double x, ParamRange r) {
    return (std::log10(x) - std::log10(r.lo)) / (std::log10(r.hi) - std::log10(r.lo));
}

[[nodiscard]] inline double denormalize_param(double p, ParamRange r) {
    return std::pow(10.0, std::log10(r.lo) + p * (std::log10(r.hi) - std::log10(r.lo)));
}

/// Physical meaning of each parameter slot; slots past the returned count are unused.
[[nodiscard]] inline std::span<const ParamRange> param_ranges(DeviceKind k) {
    static constexpr std::array<ParamRange, 3> mos{ranges::Width, ranges::Length, ranges::Multiplier};
    static constexpr std::array<ParamRange, 1> cap{ranges::Capacitance};
    static constexpr std::array<ParamRange, 1> res{ranges::Resistance};
    static constexpr std::array<ParamRange, 1> cur{ranges::Current};
    switch (k) {
        case DeviceKind::Resistor: return res;
        case DeviceKind::Capacitor: return cap;
        case DeviceKind::BiasCurrent: return cur;
        default: return mos;
    }
}

// -----------------------------------------------------------------------------
// Graph types
// -----------------------------------------------------------------------------

using ParamVector = std::array<double, kParamCount>;

struct Node {
    DeviceKind kind = DeviceKind::Nmos;
    ParamVector params{};

    friend bool operator==(const Node&, const Node&) = default;
};

/// k x k port-connection matrix between two nodes.
struct PortEdge {
    std::array<std::array<std::uint8_t, kMaxPorts>, kMaxPorts> xi{};

    [[nodiscard]] bool empty() const {
        for (const auto& row : xi)
            for (auto v : row)
                if (v) return false;
        return true;
    }

    [[nodiscard]] PortEdge transposed() const {
        PortEdge t;
        for (std::size_t i = 0; i < kMaxPorts; ++i)
            for (std::size_t j = 0; j < kMaxPorts; ++j) t.xi[j][i] = xi[i][j];
        return t;
    }

    friend bool operator==(const PortEdge&, const PortEdge&) = default;
};

enum class Pin : std::uint8_t { Inp, Inn, Out, Vdd, Vss, Ibias };
inline constexpr std::array<Pin, 6> kAllPins{Pin::Inp, Pin::Inn, Pin::Out, Pin::Vdd, Pin::Vss, Pin::Ibias};

[[nodiscard]] constexpr std::string_view pin_name(Pin p) {
    constexpr std::array<std::string_view, 6> names{"INP", "INN", "OUT", "VDD", "VSS", "IBIAS"};
    return names[static_cast<std::size_t>(p)];
}

[[nodiscard]] inline Pin pin_from_name(std::string_view s) {
    for (Pin p : kAllPins)
        if (pin_name(p) == s) return p;
    throw std::invalid_argument("unknown pin: " + std::string(s));
}

struct PortRef {
    std::size_t node = 0;
    std::size_t port = 0;

    friend auto operator<=>(const PortRef&, const PortRef&) = default;
};

class CircuitGraph {
public:
    CircuitGraph() = default;

    explicit CircuitGraph(std::vector<Node> nodes)
        : nodes_(std::move(nodes)), edges_(nodes_.size() * nodes_.size()) {}

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
    [[nodiscard]] const Node& node(std::size_t i) const { return nodes_.at(i); }
    Node& node(std::size_t i) { return nodes_.at(i); }

    std::size_t add_node(Node n) {
        const std::size_t old = nodes_.size();
        std::vector<PortEdge> grown((old + 1) * (old + 1));
        for (std::size_t i = 0; i < old; ++i)
            for (std::size_t j = 0; j < old; ++j) grown[i * (old + 1) + j] = edges_[i * old + j];
        edges_ = std::move(grown);
        nodes_.push_back(n);
        return old;
    }

    [[nodiscard]] const PortEdge& edge(std::size_t i, std::size_t j) const { return edges_.at(i * size() + j); }
    PortEdge& edge(std::size_t i, std::size_t j) { return edges_.at(i * size() + j); }

    /// Raw edge storage, row-major n x n.
    [[nodiscard]] const std::vector<PortEdge>& edges() const { return edges_; }
    std::vector<PortEdge>& edges() { return edges_; }

    /// Connect port pi of node i to port pj of node j, keeping the pair symmetric.
    void connect(std::size_t i, std::size_t pi, std::size_t j, std::size_t pj) {
        if (i == j) throw std::invalid_argument("self connection on node " + std::to_string(i));
        edge(i, j).xi.at(pi).at(pj) = 1;
        edge(j, i).xi.at(pj).at(pi) = 1;
    }

    [[nodiscard]] const std::map<Pin, PortRef>& io() const { return io_; }
    std::map<Pin, PortRef>& io() { return io_; }
    void bind(Pin pin, std::size_t node, std::size_t port) { io_[pin] = PortRef{node, port}; }

    friend bool operator==(const CircuitGraph&, const CircuitGraph&) = default;

private:
    std::vector<Node> nodes_;
    std::vector<PortEdge> edges_;
    std::map<Pin, PortRef> io_;
};

// -----------------------------------------------------------------------------
// Nets: union-find over (node, port) with pin bindings and default rail ties
// -----------------------------------------------------------------------------

enum class NetLabel : std::uint8_t { Internal, Inp, Inn, Out, Vdd, Vss, Ibias };

[[nodiscard]] constexpr NetLabel label_of(Pin p) { return static_cast<NetLabel>(static_cast<std::uint8_t>(p) + 1); }

class DisjointSet {
public:
    explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (b < a) std::swap(a, b);
        parent_[b] = a;  // smallest index is the representative
    }

private:
    std::vector<std::size_t> parent_;
};

struct NetMap {
    /// Net id for each (node, port) slot, indexed node * kMaxPorts + port; npos for unused slots.
    std::vector<std::size_t> slot_net;
    /// Per-net pin labels (a net may carry several labels when pins are shorted).
    std::vector<std::vector<NetLabel>> labels;
    /// Per-net member slots in ascending order.
    std::vector<std::vector<std::size_t>> members;

    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    [[nodiscard]] std::size_t net_of(std::size_t node, std::size_t port) const { return slot_net.at(node * kMaxPorts + port); }
    [[nodiscard]] std::size_t count() const { return members.size(); }
    [[nodiscard]] bool has_label(std::size_t net, NetLabel l) const {
        return std::find(labels[net].begin(), labels[net].end(), l) != labels[net].end();
    }
};

[[nodiscard]] inline PortTie port_tie(DeviceKind k, std::size_t p) { return kind_info(k).ports[p].tie; }
[[nodiscard]] inline PortRole port_role(DeviceKind k, std::size_t p) { return kind_info(k).ports[p].role; }

/// Rail a defaulted port resolves to, or nullopt for required ports.
[[nodiscard]] inline std::optional<NetLabel> default_rail(DeviceKind k, std::size_t p) {
    switch (port_tie(k, p)) {
        case PortTie::Required: return std::nullopt;
        case PortTie::Vdd: return NetLabel::Vdd;
        case PortTie::Vss: return NetLabel::Vss;
        case PortTie::PolarityRail: return kind_info(k).polarity == Polarity::P ? NetLabel::Vdd : NetLabel::Vss;
    }
    return std::nullopt;
}

/// Build nets assuming port indices are in range (callers validate first).
/// Bulk ports always go to their rail; unconnected unbound ports with a default tie join that rail.
[[nodiscard]] inline NetMap build_nets(const CircuitGraph& g) {
    const std::size_t n = g.size();
    const std::size_t slots = n * kMaxPorts;
    // Two extra virtual slots represent the VDD and VSS rails.
    const std::size_t vdd_slot = slots, vss_slot = slots + 1;
    DisjointSet ds(slots + 2);

    std::vector<bool> touched(slots, false);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const auto& xi = g.edge(i, j).xi;
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v)
                    if (xi[u][v]) {
                        ds.unite(i * kMaxPorts + u, j * kMaxPorts + v);
                        touched[i * kMaxPorts + u] = true;
                        touched[j * kMaxPorts + v] = true;
                    }
        }
    }

    std::map<std::size_t, std::vector<NetLabel>> slot_labels;
    for (const auto& [pin, ref] : g.io()) {
        const std::size_t s = ref.node * kMaxPorts + ref.port;
        touched[s] = true;
        if (pin == Pin::Vdd) ds.unite(s, vdd_slot);
        else if (pin == Pin::Vss) ds.unite(s, vss_slot);
        else slot_labels[s].push_back(label_of(pin));
    }

    for (std::size_t i = 0; i < n; ++i) {
        const DeviceKind k = g.node(i).kind;
        for (std::size_t p = 0; p < port_count(k); ++p) {
            const std::size_t s = i * kMaxPorts + p;
            if (port_role(k, p) == PortRole::Bulk || !touched[s]) {
                if (auto rail = default_rail(k, p)) ds.unite(s, *rail == NetLabel::Vdd ? vdd_slot : vss_slot);
            }
        }
    }

    NetMap nm;
    nm.slot_net.assign(slots, NetMap::npos);
    std::map<std::size_t, std::size_t> root_to_net;
    auto net_for_root = [&](std::size_t root) {
        auto it = root_to_net.find(root);
        if (it != root_to_net.end()) return it->second;
        const std::size_t id = nm.members.size();
        root_to_net.emplace(root, id);
        nm.members.emplace_back();
        nm.labels.emplace_back();
        return id;
    };
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < port_count(g.node(i).kind); ++p) {
            const std::size_t s = i * kMaxPorts + p;
            const std::size_t net = net_for_root(ds.find(s));
            nm.slot_net[s] = net;
            nm.members[net].push_back(s);
            if (auto it = slot_labels.find(s); it != slot_labels.end())
                for (NetLabel l : it->second)
                    if (!nm.has_label(net, l)) nm.labels[net].push_back(l);
        }
    }
    const std::size_t vdd_root = ds.find(vdd_slot), vss_root = ds.find(vss_slot);
    if (auto it = root_to_net.find(vdd_root); it != root_to_net.end()) nm.labels[it->second].push_back(NetLabel::Vdd);
    if (auto it = root_to_net.find(vss_root); it != root_to_net.end() && !nm.has_label(it->second, NetLabel::Vss))
        nm.labels[it->second].push_back(NetLabel::Vss);
    for (auto& l : nm.labels) std::sort(l.begin(), l.end());
    return nm;
}

// -----------------------------------------------------------------------------
// Validation
// -----------------------------------------------------------------------------

enum class ViolationKind : std::uint8_t {
    MalformedShape,
    SelfEdge,
    AsymmetricEdge,
    PortOutOfRange,
    BulkEdge,
    ParamOutOfRange,
    MissingBinding,
    BadBinding,
    FloatingPort,
    FloatingGateNet,
    ShortedPins,
    UnreachableNode,
};

[[nodiscard]] constexpr std::string_view violation_name(ViolationKind k) {
    constexpr std::array<std::string_view, 12> names{
        "malformed-shape", "self-edge", "asymmetric-edge", "port-out-of-range", "bulk-edge", "param-out-of-range",
        "missing-binding", "bad-binding", "floating-port", "floating-gate-net", "shorted-pins", "unreachable-node"};
    return names[static_cast<std::size_t>(k)];
}

struct Violation {
    ViolationKind kind;
    std::string detail;

    friend bool operator==(const Violation&, const Violation&) = default;
};

using ValidationReport = std::vector<Violation>;

[[nodiscard]] inline std::string to_string(const ValidationReport& report) {
    std::ostringstream os;
    for (const auto& v : report) os << violation_name(v.kind) << ": " << v.detail << '\n';
    return os.str();
}

/// Report every violated structural invariant; empty means valid.
[[nodiscard]] inline ValidationReport validate(const CircuitGraph& g) {
    ValidationReport out;
    const std::size_t n = g.size();
    if (g.edges().size() != n * n) {
        out.push_back({ViolationKind::MalformedShape, "edge storage is not n x n"});
        return out;
    }
    auto where = [](std::size_t i, std::size_t j) {
        return "(" + std::to_string(i) + "," + std::to_string(j) + ")";
    };

    bool ports_ok = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (!g.edge(i, i).empty()) out.push_back({ViolationKind::SelfEdge, "node " + std::to_string(i)});
        for (std::size_t j = i + 1; j < n; ++j) {
            if (g.edge(j, i) != g.edge(i, j).transposed())
                out.push_back({ViolationKind::AsymmetricEdge, "pair " + where(i, j)});
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const DeviceKind ki = g.node(i).kind;
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const DeviceKind kj = g.node(j).kind;
            const auto& xi = g.edge(i, j).xi;
            bool range = false, bulk = false;
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v) {
                    if (!xi[u][v]) continue;
                    if (u >= port_count(ki) || v >= port_count(kj)) range = true;
                    else if (port_role(ki, u) == PortRole::Bulk || port_role(kj, v) == PortRole::Bulk) bulk = true;
                }
            // Report each unordered pair once, from its upper triangle.
            if (i < j || g.edge(j, i).empty()) {
                if (range) out.push_back({ViolationKind::PortOutOfRange, "pair " + where(i, j)});
                if (bulk) out.push_back({ViolationKind::BulkEdge, "pair " + where(i, j)});
            }
            ports_ok = ports_ok && !range;
        }
        const auto& p = g.node(i).params;
        for (std::size_t s = 0; s < kParamCount; ++s) {
            if (!std::isfinite(p[s]) || p[s] < 0.0 || p[s] > 1.0) {
                out.push_back({ViolationKind::ParamOutOfRange, "node " + std::to_string(i) + " slot " + std::to_string(s)});
                break;
            }
        }
    }

    bool bindings_ok = true;
    for (const auto& [pin, ref] : g.io()) {
        if (ref.node >= n || ref.port >= port_count(g.node(ref.node).kind) ||
            port_role(g.node(ref.node).kind, ref.port) == PortRole::Bulk) {
            out.push_back({ViolationKind::BadBinding, std::string(pin_name(pin))});
            bindings_ok = false;
        }
    }
    for (Pin pin : {Pin::Inp, Pin::Inn, Pin::Out, Pin::Vdd, Pin::Vss}) {
        if (!g.io().contains(pin)) out.push_back({ViolationKind::MissingBinding, std::string(pin_name(pin))});
    }
    if (!ports_ok || !bindings_ok) return out;

    const NetMap nets = build_nets(g);
    for (std::size_t net = 0; net < nets.count(); ++net) {
        const auto& mem = nets.members[net];
        const auto& lab = nets.labels[net];
        if (lab.size() > 1) {
            std::string names;
            for (NetLabel l : lab) names += (names.empty() ? "" : "/") + std::to_string(static_cast<int>(l));
            out.push_back({ViolationKind::ShortedPins, "net of slot " + std::to_string(mem.front()) + " labels " + names});
        }
        if (!lab.empty()) continue;
        if (mem.size() == 1) {
            const std::size_t node = mem.front() / kMaxPorts, p = mem.front() % kMaxPorts;
            if (port_tie(g.node(node).kind, p) == PortTie::Required)
                out.push_back({ViolationKind::FloatingPort,
                               "node " + std::to_string(node) + " port " + std::string(kind_info(g.node(node).kind).ports[p].name)});
            continue;
        }
        const bool gates_only = std::all_of(mem.begin(), mem.end(), [&](std::size_t s) {
            const auto role = port_role(g.node(s / kMaxPorts).kind, s % kMaxPorts);
            return role == PortRole::Gate || role == PortRole::InP || role == PortRole::InN;
        });
        if (gates_only) out.push_back({ViolationKind::FloatingGateNet, "net of slot " + std::to_string(mem.front())});
    }

    // Reachability from bound nodes over nonzero edges.
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack;
    for (const auto& [pin, ref] : g.io())
        if (!seen[ref.node]) {
            seen[ref.node] = true;
            stack.push_back(ref.node);
        }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        for (std::size_t j = 0; j < n; ++j)
            if (!seen[j] && j != i && (!g.edge(i, j).empty() || !g.edge(j, i).empty())) {
                seen[j] = true;
                stack.push_back(j);
            }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (!seen[i]) out.push_back({ViolationKind::UnreachableNode, "node " + std::to_string(i)});
    return out;
}

// -----------------------------------------------------------------------------
// Reference graph: NMOS-input five-transistor OTA
// -----------------------------------------------------------------------------

/// Node params for a transistor-like kind from physical W, L and multiplier.
[[nodiscard]] inline ParamVector mos_params(double w, double l, double m = 1.0) {
    return {normalize_param(w, ranges::Width), normalize_param(l, ranges::Length),
            normalize_param(m, ranges::Multiplier), 0.0};
}

[[nodiscard]] inline ParamVector value_params(DeviceKind k, double value) {
    return {normalize_param(value, param_ranges(k)[0]), 0.0, 0.0, 0.0};
}

/// Nodes: 0 = NMOS diff pair, 1 = PMOS current mirror load, 2 = NMOS tail source.
[[nodiscard]] inline CircuitGraph make_five_t_ota() {
    CircuitGraph g({
        Node{DeviceKind::NmosDiffPair, mos_params(10e-6, 0.5e-6)},
        Node{DeviceKind::PmosCurrentMirror, mos_params(6e-6, 0.5e-6)},
        Node{DeviceKind::Nmos, mos_params(8e-6, 1e-6)},
    });
    g.connect(0, port::OutP, 1, port::In);
    g.connect(0, port::OutN, 1, port::Out);
    g.connect(0, port::Tail, 2, port::Drain);
    g.bind(Pin::Inp, 0, port::InP);
    g.bind(Pin::Inn, 0, port::InN);
    g.bind(Pin::Out, 0, port::OutN);
    g.bind(Pin::Vdd, 1, port::SupplyA);
    g.bind(Pin::Vss, 2, port::Source);
    g.bind(Pin::Ibias, 2, port::Gate);
    return g;
}

// -----------------------------------------------------------------------------
// Discrete tensor form
// -----------------------------------------------------------------------------

/// Binary node one-hot matrix (n x a) and edge tensor (n x n x k x k), row-major.
struct DiscreteGraph {
    std::size_t n = 0;
    std::vector<std::uint8_t> nodes;
    std::vector<std::uint8_t> edges;

    DiscreteGraph() = default;
    explicit DiscreteGraph(std::size_t count)
        : n(count), nodes(count * kKindCount, 0), edges(count * count * kMaxPorts * kMaxPorts, 0) {}

    [[nodiscard]] std::uint8_t& node(std::size_t i, std::size_t c) { return nodes[i * kKindCount + c]; }
    [[nodiscard]] std::uint8_t node(std::size_t i, std::size_t c) const { return nodes[i * kKindCount + c]; }
    [[nodiscard]] static std::size_t edge_offset(std::size_t n, std::size_t i, std::size_t j) {
        return (i * n + j) * kMaxPorts * kMaxPorts;
    }
    [[nodiscard]] std::uint8_t& edge(std::size_t i, std::size_t j, std::size_t u, std::size_t v) {
        return edges[edge_offset(n, i, j) + u * kMaxPorts + v];
    }
    [[nodiscard]] std::uint8_t edge(std::size_t i, std::size_t j, std::size_t u, std::size_t v) const {
        return edges[edge_offset(n, i, j) + u * kMaxPorts + v];
    }
    /// Category of node i (index of its one-hot entry).
    [[nodiscard]] std::size_t kind_of(std::size_t i) const {
        for (std::size_t c = 0; c < kKindCount; ++c)
            if (node(i, c)) return c;
        throw std::invalid_argument("node row is not one-hot");
    }

    friend bool operator==(const DiscreteGraph&, const DiscreteGraph&) = default;
};

[[nodiscard]] inline DiscreteGraph to_discrete_tensor(const CircuitGraph& g) {
    DiscreteGraph d(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        d.node(i, kind_index(g.node(i).kind)) = 1;
        for (std::size_t j = 0; j < g.size(); ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v) d.edge(i, j, u, v) = g.edge(i, j).xi[u][v];
    }
    return d;
}

/// Inverse of to_discrete_tensor. params, when given, is n x b row-major; io bindings are not carried.
[[nodiscard]] inline CircuitGraph from_discrete_tensor(const DiscreteGraph& d, std::span<const double> params = {}) {
    const std::size_t n = d.n;
    if (d.nodes.size() != n * kKindCount || d.edges.size() != n * n * kMaxPorts * kMaxPorts)
        throw std::invalid_argument("discrete tensor has inconsistent shape");
    if (!params.empty() && params.size() != n * kParamCount)
        throw std::invalid_argument("parameter matrix must be n x b");
    std::vector<Node> nodes(n);
    for (std::size_t i = 0; i < n; ++i) {
        int ones = 0;
        for (std::size_t c = 0; c < kKindCount; ++c) {
            const auto v = d.node(i, c);
            if (v > 1) throw std::invalid_argument("non-binary node entry at row " + std::to_string(i));
            if (v) {
                ++ones;
                nodes[i].kind = kind_from_index(c);
            }
        }
        if (ones != 1) throw std::invalid_argument("node row " + std::to_string(i) + " is not one-hot");
        if (!params.empty())
            for (std::size_t s = 0; s < kParamCount; ++s) nodes[i].params[s] = params[i * kParamCount + s];
    }
    CircuitGraph g(std::move(nodes));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v) {
                    const auto e = d.edge(i, j, u, v);
                    if (e > 1) throw std::invalid_argument("non-binary edge entry");
                    if (e != d.edge(j, i, v, u)) throw std::invalid_argument("asymmetric edge tensor");
                    g.edge(i, j).xi[u][v] = e;
                }
    return g;
}

// -----------------------------------------------------------------------------
// JSON
// -----------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json to_json(const CircuitGraph& g) {
    using nlohmann::json;
    json nodes = json::array();
    for (const auto& nd : g.nodes())
        nodes.push_back({{"kind", std::string(kind_info(nd.kind).name)},
                         {"params", std::vector<double>(nd.params.begin(), nd.params.end())}});
    json edges = json::array();
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t j = i + 1; j < g.size(); ++j) {
            json pairs = json::array();
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v)
                    if (g.edge(i, j).xi[u][v]) pairs.push_back({u, v});
            if (!pairs.empty()) edges.push_back({{"i", i}, {"j", j}, {"pairs", pairs}});
        }
    json io = json::object();
    for (const auto& [pin, ref] : g.io()) io[std::string(pin_name(pin))] = {ref.node, ref.port};
    return {{"nodes", nodes}, {"edges", edges}, {"io", io}};
}

[[nodiscard]] inline CircuitGraph graph_from_json(const nlohmann::json& j) {
    std::vector<Node> nodes;
    for (const auto& jn : j.at("nodes")) {
        Node nd;
        nd.kind = kind_from_name(jn.at("kind").get<std::string>());
        const auto p = jn.at("params").get<std::vector<double>>();
        if (p.size() != kParamCount) throw std::invalid_argument("node params must have length 4");
        std::copy(p.begin(), p.end(), nd.params.begin());
        nodes.push_back(nd);
    }
    CircuitGraph g(std::move(nodes));
    for (const auto& je : j.at("edges")) {
        const auto i = je.at("i").get<std::size_t>(), jj = je.at("j").get<std::size_t>();
        if (i >= jj || jj >= g.size()) throw std::invalid_argument("edge entries must satisfy i < j < n");
        for (const auto& pr : je.at("pairs")) {
            const auto u = pr.at(0).get<std::size_t>(), v = pr.at(1).get<std::size_t>();
            if (u >= kMaxPorts || v >= kMaxPorts) throw std::invalid_argument("port index beyond k");
            g.connect(i, u, jj, v);
        }
    }
    if (j.contains("io"))
        for (const auto& [name, ref] : j.at("io").items())
            g.bind(pin_from_name(name), ref.at(0).get<std::size_t>(), ref.at(1).get<std::size_t>());
    return g;
}

/// 64-bit FNV-1a.
[[nodiscard]] inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return s;
}

[[nodiscard]] inline std::string graph_hash(const CircuitGraph& g) { return hex64(fnv1a(to_json(g).dump())); }

/// Uniform kinds, Bernoulli(p) xi entries over the full k x k block, no bindings.
[[nodiscard]] inline CircuitGraph random_graph(std::size_t n, double p, Rng& rng) {
    std::vector<Node> nodes(n);
    for (auto& nd : nodes) {
        nd.kind = kind_from_index(rng.index(kKindCount));
        for (auto& v : nd.params) v = rng.uniform();
    }
    CircuitGraph g(std::move(nodes));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            for (std::size_t u = 0; u < kMaxPorts; ++u)
                for (std::size_t v = 0; v < kMaxPorts; ++v)
                    if (rng.bernoulli(p)) g.connect(i, u, j, v);
    return g;
}

}  // namespace cktdiffuse
