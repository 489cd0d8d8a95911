#include <catch_amalgamated.hpp>

#include "cktdiffuse/netlist.hpp"
#include "cktdiffuse/templates.hpp"

#include <fstream>
#include <sstream>

using namespace cktdiffuse;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("value suffixes", "[netlist]") {
    double v = 0;
    REQUIRE(parse_value("6.6p", v));
    CHECK(v == 6.6e-12);
    REQUIRE(parse_value("2u", v));
    CHECK(v == 2e-6);
    REQUIRE(parse_value("200n", v));
    CHECK(v == 2e-7);
    REQUIRE(parse_value("1MEG", v));
    CHECK(v == 1e6);
    REQUIRE(parse_value("3m", v));
    CHECK(v == 3e-3);
    REQUIRE(parse_value("1.5e-3k", v));
    CHECK(v == 1.5);
    REQUIRE(parse_value("10F", v));
    CHECK(v == 1e-14);
    CHECK_FALSE(parse_value("2x", v));
    CHECK_FALSE(parse_value("u", v));
    CHECK_FALSE(parse_value("1e", v));
    CHECK_FALSE(parse_value("", v));
}

TEST_CASE("format_value round trips exactly", "[netlist]") {
    Rng rng(11);
    for (int i = 0; i < 20000; ++i) {
        const double x = std::pow(10.0, rng.uniform(-18.0, 10.0)) * (rng.bernoulli(0.1) ? -1.0 : 1.0);
        double back = 0;
        const auto s = format_value(x);
        REQUIRE(parse_value(s, back));
        REQUIRE(back == x);
    }
    CHECK(format_value(2e-6) == "2u");
    CHECK(format_value(6.6e-12) == "6.6p");
    CHECK(format_value(1e6) == "1meg");
    CHECK(format_value(150.0) == "150");
    CHECK(format_value(0.0) == "0");
}

TEST_CASE("single transistor card", "[netlist]") {
    const auto nl = parse_netlist("M1 out inp tail 0 nmos W=2u L=200n\n");
    REQUIRE(nl.cards.size() == 1);
    const auto& c = nl.cards[0];
    CHECK(c.name == "M1");
    CHECK(c.type == 'M');
    CHECK(c.terminals == std::vector<std::string>{"out", "inp", "tail", "0"});
    CHECK(c.model == "nmos");
    CHECK(c.params.at("W") == 2e-6);
    CHECK(c.params.at("L") == 2e-7);
    CHECK(nl.nets == std::set<std::string>{"out", "inp", "tail", "0"});
}

TEST_CASE("capacitor card", "[netlist]") {
    const auto nl = parse_netlist("C1 out 0 6.6p");
    REQUIRE(nl.cards.size() == 1);
    CHECK(nl.cards[0].type == 'C');
    CHECK(nl.cards[0].value() == 6.6e-12);
}

TEST_CASE("parse errors carry position", "[netlist]") {
    auto check_error = [](const std::string& text, std::size_t line, std::size_t column) {
        try {
            (void)parse_netlist(text);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == line);
            CHECK(e.column() == column);
        }
    };
    check_error("* header\nQ1 a b c npn\n", 2, 1);
    check_error("C1 out 0\n", 1, 8);
    check_error("R1 a b 10x\n", 1, 8);
    check_error("M1 d g s b nmos W=1u L=2q\n", 1, 22);
    check_error("M1 d g s b bjt W=1u L=1u\n", 1, 12);
    check_error("C1 a b 1p\nC1 a b 2p\n", 2, 1);
}

TEST_CASE("golden netlist normalizes and round trips", "[netlist]") {
    const auto text = slurp(std::string(CKT_TEST_DATA) + "/golden.sp");
    const auto normalized = slurp(std::string(CKT_TEST_DATA) + "/golden.normalized.sp");
    std::size_t lines = std::count(text.begin(), text.end(), '\n');
    CHECK(lines == 50);
    const auto nl = parse_netlist(text);
    CHECK(emit_netlist(nl) == normalized);
    CHECK(parse_netlist(emit_netlist(nl)) == nl);
    CHECK(emit_netlist(parse_netlist(normalized)) == normalized);
}

TEST_CASE("five-transistor OTA expands to five transistors and one source", "[netlist][templates]") {
    const auto nl = expand(make_five_t_ota());
    const auto m = std::count_if(nl.cards.begin(), nl.cards.end(), [](const Card& c) { return c.type == 'M'; });
    const auto i = std::count_if(nl.cards.begin(), nl.cards.end(), [](const Card& c) { return c.type == 'I'; });
    CHECK(m == 5);
    CHECK(i == 1);
    CHECK(nl.cards.size() == 6);
    for (const char* pin : {"vdd", "0", "inp", "inn", "out", "ibias"}) CHECK(nl.nets.contains(pin));
    // Mirror diode side shares the diff-pair OutP net.
    const Card* diode = nl.find("M1A");
    REQUIRE(diode);
    CHECK(diode->terminals[0] == diode->terminals[1]);
    CHECK(diode->terminals[0] == nl.find("M0A")->terminals[0]);
    CHECK(nl.find("M0B")->terminals[0] == "out");
}

TEST_CASE("single capacitor graph expands to one card", "[netlist][templates]") {
    CircuitGraph g({Node{DeviceKind::Capacitor, value_params(DeviceKind::Capacitor, 1e-12)}});
    g.bind(Pin::Out, 0, port::P);
    g.bind(Pin::Vss, 0, port::N);
    const auto nl = expand(g);
    REQUIRE(nl.cards.size() == 1);
    CHECK(nl.cards[0].type == 'C');
    CHECK(nl.cards[0].terminals == std::vector<std::string>{"out", "0"});
}

TEST_CASE("expand rejects invalid graphs with the report", "[templates]") {
    auto g = make_five_t_ota();
    g.edge(0, 2).xi[0][0] = 1;
    try {
        (void)expand(g);
        FAIL("expected rejection");
    } catch (const InvalidGraphError& e) {
        CHECK_FALSE(e.report().empty());
    }
}

TEST_CASE("template library closure", "[templates]") {
    const auto all = all_structures();
    CHECK(all.size() == 12);
    std::set<std::size_t> sizes;
    for (const auto& s : all) {
        INFO(s.template_id);
        CHECK(validate(s.graph).empty());
        const auto nl = expand(s.graph);
        CHECK(emit_netlist(expand(s.graph)) == emit_netlist(nl));
        const auto back = parse_netlist(emit_netlist(nl));
        CHECK(card_multiset(back) == card_multiset(nl));
        CHECK(back == nl);
        std::size_t ports = 0;
        for (const auto& n : s.graph.nodes()) ports += port_count(n.kind);
        CHECK(nl.nets.size() <= ports);
        for (const auto& c : nl.cards)
            if (c.type == 'M') {
                CHECK(c.terminals.size() == 4);
                CHECK(c.params.at("W") > 0);
                CHECK(c.params.at("L") > 0);
            }
        sizes.insert(s.graph.size());
    }
    CHECK(*sizes.begin() >= 3);
    CHECK(*sizes.rbegin() <= 10);
}

TEST_CASE("sample_structure coverage", "[templates]") {
    const auto only = parse_template_set({"nmos5t:1s"});
    Rng rng0(0);
    const auto s = sample_structure(rng0, only);
    CHECK(s.graph == make_five_t_ota());

    const auto lib = parse_template_set({"all"});
    std::map<std::string, int> seen;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const auto r = sample_structure(rng, lib);
        CHECK(validate(r.graph).empty());
        seen[r.template_id.substr(0, r.template_id.find(':'))]++;
    }
    CHECK(seen.size() == template_library().size());
    for (const auto& [id, n] : seen) CHECK(n >= 1);
    CHECK_THROWS_AS(parse_template_set({"nmos5t:9s"}), std::invalid_argument);
}
