#include <catch_amalgamated.hpp>

#include "cktdiffuse/graph.hpp"
#include "cktdiffuse/templates.hpp"

using namespace cktdiffuse;

TEST_CASE("kind table is consistent", "[graph]") {
    std::size_t max_ports = 0;
    for (std::size_t i = 0; i < kKindCount; ++i) {
        const auto& info = kind_info(kind_from_index(i));
        CHECK(info.ports.size() >= 2);
        max_ports = std::max(max_ports, info.ports.size());
        CHECK(kind_from_name(info.name) == kind_from_index(i));
    }
    CHECK(max_ports == kMaxPorts);
    CHECK_THROWS_AS(kind_from_name("JFET"), std::invalid_argument);
}

TEST_CASE("param normalization round trips", "[graph]") {
    for (double w : {0.2e-6, 1e-6, 37e-6, 200e-6}) {
        const double p = normalize_param(w, ranges::Width);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0 + 1e-15);
        CHECK(denormalize_param(p, ranges::Width) == Catch::Approx(w).epsilon(1e-12));
    }
    CHECK(normalize_param(ranges::Current.lo, ranges::Current) == 0.0);
    CHECK(normalize_param(ranges::Current.hi, ranges::Current) == Catch::Approx(1.0));
}

TEST_CASE("five-transistor OTA matches the reference structure", "[graph]") {
    const auto g = make_five_t_ota();
    REQUIRE(g.size() == 3);
    std::multiset<DeviceKind> kinds;
    for (const auto& n : g.nodes()) kinds.insert(n.kind);
    CHECK(kinds == std::multiset<DeviceKind>{DeviceKind::PmosCurrentMirror, DeviceKind::NmosDiffPair, DeviceKind::Nmos});

    // Diff pair is node 0, mirror node 1. 1-based (1,3) and (2,4).
    const auto& xi = g.edge(0, 1).xi;
    int ones = 0;
    for (const auto& row : xi)
        for (auto v : row) ones += v;
    CHECK(ones == 2);
    CHECK(xi[1 - 1][3 - 1] == 1);
    CHECK(xi[2 - 1][4 - 1] == 1);
    CHECK(validate(g).empty());
}

TEST_CASE("validator flags asymmetric edges", "[graph]") {
    auto g = make_five_t_ota();
    g.edge(0, 1).xi[4][0] = 1;  // no mirror in edge(1,0)
    const auto report = validate(g);
    const auto count = std::count_if(report.begin(), report.end(),
                                     [](const Violation& v) { return v.kind == ViolationKind::AsymmetricEdge; });
    CHECK(count == 1);
}

TEST_CASE("validator flags missing bindings and floating ports", "[graph]") {
    auto g = make_five_t_ota();
    g.io().erase(Pin::Out);
    auto report = validate(g);
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) {
        return v.kind == ViolationKind::MissingBinding && v.detail == "OUT";
    }));

    CircuitGraph lone({Node{DeviceKind::Nmos, mos_params(1e-6, 1e-6)}});
    lone.bind(Pin::Inp, 0, port::Gate);
    report = validate(lone);
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) { return v.kind == ViolationKind::FloatingPort; }));
}

TEST_CASE("validator flags unreachable nodes and bulk edges", "[graph]") {
    auto g = make_five_t_ota();
    g.add_node({DeviceKind::Capacitor, value_params(DeviceKind::Capacitor, 1e-12)});
    auto report = validate(g);
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) {
        return v.kind == ViolationKind::UnreachableNode && v.detail == "node 3";
    }));

    auto h = make_five_t_ota();
    h.connect(2, port::Bulk, 0, port::Tail);
    report = validate(h);
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) { return v.kind == ViolationKind::BulkEdge; }));
}

TEST_CASE("validator flags out-of-range ports and params", "[graph]") {
    auto g = make_five_t_ota();
    g.connect(1, 4, 2, port::Drain);  // a mirror has only four ports
    g.node(2).params[0] = 1.5;
    const auto report = validate(g);
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) { return v.kind == ViolationKind::PortOutOfRange; }));
    CHECK(std::any_of(report.begin(), report.end(), [](const Violation& v) { return v.kind == ViolationKind::ParamOutOfRange; }));
}

TEST_CASE("random graph validation is a frozen golden list", "[graph]") {
    Rng rng(7);
    const auto g = random_graph(5, 0.5, rng);
    const auto report = validate(g);
    REQUIRE_FALSE(report.empty());
    // Recorded from the validator on first run.
    const std::string golden =
        "port-out-of-range: pair (0,1)\n"
        "bulk-edge: pair (0,1)\n"
        "port-out-of-range: pair (0,2)\n"
        "bulk-edge: pair (0,2)\n"
        "port-out-of-range: pair (0,3)\n"
        "bulk-edge: pair (0,3)\n"
        "port-out-of-range: pair (0,4)\n"
        "bulk-edge: pair (0,4)\n"
        "port-out-of-range: pair (1,2)\n"
        "port-out-of-range: pair (1,3)\n"
        "port-out-of-range: pair (1,4)\n"
        "port-out-of-range: pair (2,3)\n"
        "port-out-of-range: pair (2,4)\n"
        "port-out-of-range: pair (3,4)\n"
        "missing-binding: INP\n"
        "missing-binding: INN\n"
        "missing-binding: OUT\n"
        "missing-binding: VDD\n"
        "missing-binding: VSS\n";
    CHECK(to_string(report) == golden);
}

TEST_CASE("discrete tensor round trip", "[graph]") {
    const auto g = make_five_t_ota();
    const auto d = to_discrete_tensor(g);
    for (std::size_t i = 0; i < d.n; ++i) {
        int sum = 0;
        for (std::size_t c = 0; c < kKindCount; ++c) sum += d.node(i, c);
        CHECK(sum == 1);
    }
    std::vector<double> params;
    for (const auto& n : g.nodes()) params.insert(params.end(), n.params.begin(), n.params.end());
    auto back = from_discrete_tensor(d, params);
    back.io() = g.io();
    CHECK(back == g);

    CircuitGraph one({Node{DeviceKind::Capacitor, {}}});
    const auto d1 = to_discrete_tensor(one);
    CHECK(std::all_of(d1.edges.begin(), d1.edges.end(), [](auto v) { return v == 0; }));

    for (const auto& s : all_structures()) {
        std::vector<double> p;
        for (const auto& n : s.graph.nodes()) p.insert(p.end(), n.params.begin(), n.params.end());
        auto r = from_discrete_tensor(to_discrete_tensor(s.graph), p);
        r.io() = s.graph.io();
        CHECK(r == s.graph);
    }
}

TEST_CASE("discrete tensor inverse rejects bad input", "[graph]") {
    auto d = to_discrete_tensor(make_five_t_ota());
    auto bad = d;
    bad.node(0, 3) = 1;  // two ones
    CHECK_THROWS_AS(from_discrete_tensor(bad), std::invalid_argument);
    bad = d;
    bad.edge(0, 1, 0, 0) = 2;
    bad.edge(1, 0, 0, 0) = 2;
    CHECK_THROWS_AS(from_discrete_tensor(bad), std::invalid_argument);
    bad = d;
    bad.edge(0, 2, 3, 3) = 1;
    CHECK_THROWS_AS(from_discrete_tensor(bad), std::invalid_argument);
}

TEST_CASE("graph JSON round trip", "[graph]") {
    for (const auto& s : all_structures()) {
        const auto j = to_json(s.graph);
        for (const auto& e : j.at("edges")) CHECK(e.at("i").get<int>() < e.at("j").get<int>());
        const auto back = graph_from_json(nlohmann::json::parse(j.dump()));
        CHECK(back == s.graph);
        CHECK(graph_hash(back) == graph_hash(s.graph));
    }
}

TEST_CASE("nets merge rails and pins", "[graph]") {
    const auto g = make_five_t_ota();
    const auto nets = build_nets(g);
    // Tail NMOS bulk and source both sit on VSS.
    CHECK(nets.net_of(2, port::Bulk) == nets.net_of(2, port::Source));
    CHECK(nets.has_label(nets.net_of(1, port::SupplyB), NetLabel::Vdd));
    CHECK(nets.net_of(0, port::OutN) == nets.net_of(1, port::Out));
    CHECK(nets.has_label(nets.net_of(0, port::OutN), NetLabel::Out));
}
