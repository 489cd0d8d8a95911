#pragma once

// Pin binding recovery for generated graphs, which carry no io map.
// INP/INN go to the first differential pair; OUT is the deepest gain net,
// with the input polarity chosen so OUT follows INP.

#include <optional>
#include <vector>

#include "graph.hpp"

namespace cktdiffuse {

namespace detail {

struct NetSignal {
    int sign = 0;  // +1 follows InP, -1 opposes it, 0 not reached
    int depth = -1;
};

inline bool slot_touched(const CircuitGraph& g, std::size_t node, std::size_t port) {
    for (std::size_t j = 0; j < g.size(); ++j) {
        if (j == node) continue;
        for (std::size_t v = 0; v < kMaxPorts; ++v)
            if (g.edge(node, j).xi[port][v]) return true;
    }
    return false;
}

inline bool net_has_rail(const NetMap& nets, std::size_t net) {
    return nets.has_label(net, NetLabel::Vdd) || nets.has_label(net, NetLabel::Vss);
}

}  // namespace detail

/// Replaces the io map of g with recovered bindings. Pins that cannot be
/// placed stay unbound and show up as missing bindings in validate().
inline void recover_bindings(CircuitGraph& g) {
    g.io().clear();
    const std::size_t n = g.size();

    // Rails: first port left to its default tie.
    auto bind_rail = [&](Pin pin, NetLabel rail) {
        for (std::size_t i = 0; i < n; ++i) {
            const DeviceKind k = g.node(i).kind;
            for (std::size_t p = 0; p < port_count(k); ++p) {
                if (port_role(k, p) == PortRole::Bulk) continue;
                if (default_rail(k, p) == rail && !detail::slot_touched(g, i, p)) {
                    g.bind(pin, i, p);
                    return;
                }
            }
        }
    };
    bind_rail(Pin::Vdd, NetLabel::Vdd);
    bind_rail(Pin::Vss, NetLabel::Vss);

    std::optional<std::size_t> dp;
    for (std::size_t i = 0; i < n && !dp; ++i) {
        const DeviceKind k = g.node(i).kind;
        if (k == DeviceKind::NmosDiffPair || k == DeviceKind::PmosDiffPair) dp = i;
    }

    const NetMap nets = build_nets(g);

    // Bias: a net made only of NMOS gates or NMOS mirror inputs.
    for (std::size_t net = 0; net < nets.count(); ++net) {
        if (detail::net_has_rail(nets, net)) continue;
        bool ok = !nets.members[net].empty();
        for (std::size_t s : nets.members[net]) {
            const DeviceKind k = g.node(s / kMaxPorts).kind;
            const std::size_t p = s % kMaxPorts;
            const bool gate = (k == DeviceKind::Nmos && p == port::Gate) ||
                              (k == DeviceKind::NmosCurrentMirror && p == port::In);
            if (!gate) ok = false;
        }
        if (ok) {
            const std::size_t s = nets.members[net].front();
            g.bind(Pin::Ibias, s / kMaxPorts, s % kMaxPorts);
            break;
        }
    }

    if (!dp) return;

    // Signal propagation from the pair through mirrors and common-source devices.
    std::vector<detail::NetSignal> sig(nets.count());
    auto assign = [&](std::size_t net, int sign, int depth) {
        if (net == NetMap::npos || sig[net].sign != 0 || detail::net_has_rail(nets, net)) return false;
        sig[net] = {sign, depth};
        return true;
    };
    assign(nets.net_of(*dp, port::InP), 1, 0);
    assign(nets.net_of(*dp, port::InN), -1, 0);
    assign(nets.net_of(*dp, port::OutP), -1, 1);
    assign(nets.net_of(*dp, port::OutN), 1, 1);
    for (bool changed = true; changed;) {
        changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            const DeviceKind k = g.node(i).kind;
            if (k == DeviceKind::Nmos || k == DeviceKind::Pmos) {
                const std::size_t gn = nets.net_of(i, port::Gate), dn = nets.net_of(i, port::Drain);
                if (gn != dn && sig[gn].sign != 0 && sig[gn].depth > 0)
                    changed |= assign(dn, -sig[gn].sign, sig[gn].depth + 1);
            } else if (k == DeviceKind::NmosCurrentMirror || k == DeviceKind::PmosCurrentMirror) {
                const std::size_t in = nets.net_of(i, port::In), out = nets.net_of(i, port::Out);
                if (in != out && sig[in].sign != 0 && sig[in].depth > 0)
                    changed |= assign(out, -sig[in].sign, sig[in].depth);
            }
        }
    }

    // Output: deepest net that is not a diode or mirror input; mirror outputs win ties.
    std::optional<std::size_t> best;
    bool best_mirror = false;
    for (std::size_t net = 0; net < nets.count(); ++net) {
        if (sig[net].depth < 1) continue;
        bool diode = false, mirror_out = false;
        for (std::size_t s : nets.members[net]) {
            const std::size_t i = s / kMaxPorts, p = s % kMaxPorts;
            const DeviceKind k = g.node(i).kind;
            if ((k == DeviceKind::NmosCurrentMirror || k == DeviceKind::PmosCurrentMirror) && p == port::In) diode = true;
            if ((k == DeviceKind::NmosCurrentMirror || k == DeviceKind::PmosCurrentMirror) && p == port::Out) mirror_out = true;
            if ((k == DeviceKind::Nmos || k == DeviceKind::Pmos) && p == port::Drain &&
                nets.net_of(i, port::Gate) == net)
                diode = true;
        }
        if (diode) continue;
        if (!best || sig[net].depth > sig[*best].depth || (sig[net].depth == sig[*best].depth && mirror_out && !best_mirror)) {
            best = net;
            best_mirror = mirror_out;
        }
    }
    if (!best) return;
    const std::size_t out_slot = nets.members[*best].front();
    g.bind(Pin::Out, out_slot / kMaxPorts, out_slot % kMaxPorts);
    const bool follows = sig[*best].sign > 0;
    g.bind(Pin::Inp, *dp, follows ? port::InP : port::InN);
    g.bind(Pin::Inn, *dp, follows ? port::InN : port::InP);
}

}  // namespace cktdiffuse
