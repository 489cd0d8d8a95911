#pragma once

// SPICE-subset netlist: M/C/R/I cards, '*' comments, engineering suffixes.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cktdiffuse {

struct Card {
    std::string name;
    char type = 'M';                       // M, C, R or I
    std::vector<std::string> terminals;    // M: d g s b; others: p n
    std::string model;                     // nmos / pmos for M cards
    std::map<std::string, double> params;  // W, L, M for M cards; "value" otherwise

    [[nodiscard]] double value() const { return params.at("value"); }

    friend auto operator<=>(const Card&, const Card&) = default;
    friend bool operator==(const Card&, const Card&) = default;
};

struct Netlist {
    std::string graph_hash;
    std::set<std::string> nets;
    std::vector<Card> cards;

    friend bool operator==(const Netlist&, const Netlist&) = default;

    [[nodiscard]] const Card* find(std::string_view name) const {
        for (const auto& c : cards)
            if (c.name == name) return &c;
        return nullptr;
    }
};

/// Cards as a sorted multiset, for order-insensitive comparison.
[[nodiscard]] inline std::vector<Card> card_multiset(const Netlist& nl) {
    auto cards = nl.cards;
    std::sort(cards.begin(), cards.end());
    return cards;
}

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
          line_(line),
          column_(column) {}

    [[nodiscard]] std::size_t line() const { return line_; }
    [[nodiscard]] std::size_t column() const { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

namespace detail {

struct Suffix {
    std::string_view text;
    int exponent;
};

// Longest match first so "meg" wins over "m".
inline constexpr Suffix kSuffixes[] = {{"meg", 6}, {"f", -15}, {"p", -12}, {"n", -9},
                                       {"u", -6},  {"m", -3},  {"k", 3}};

inline std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace detail

/// Parse "6.6p", "2u", "1meg", "1e-6". Returns false on malformed input.
[[nodiscard]] inline bool parse_value(std::string_view text, double& out) {
    if (text.empty()) return false;
    std::size_t pos = 0;
    if (text[pos] == '+' || text[pos] == '-') ++pos;
    bool digits = false;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        ++pos;
        digits = true;
    }
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            ++pos;
            digits = true;
        }
    }
    if (!digits) return false;
    int exponent = 0;
    if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
        std::size_t q = pos + 1;
        if (q < text.size() && (text[q] == '+' || text[q] == '-')) ++q;
        const std::size_t exp_start = q;
        while (q < text.size() && std::isdigit(static_cast<unsigned char>(text[q]))) ++q;
        if (q == exp_start) return false;
        if (std::from_chars(text.data() + pos + 1 + (text[pos + 1] == '+'), text.data() + q, exponent).ec != std::errc{})
            return false;
        pos = q;
    }
    const std::string mantissa(text.substr(0, pos));
    const std::string rest = detail::lower(text.substr(pos));
    int scale = 0;
    if (!rest.empty()) {
        bool matched = false;
        for (const auto& s : detail::kSuffixes)
            if (rest == s.text) {
                scale = s.exponent;
                matched = true;
                break;
            }
        if (!matched) return false;
    }
    // Recompose as one decimal literal so strtod rounds once.
    std::string literal = mantissa;
    if (literal.find_first_of("eE") != std::string::npos) literal = literal.substr(0, literal.find_first_of("eE"));
    literal += "e" + std::to_string(exponent + scale);
    char* end = nullptr;
    out = std::strtod(literal.c_str(), &end);
    return end == literal.c_str() + literal.size() && std::isfinite(out);
}

/// Shortest text that parses back to exactly v, using an engineering suffix where one fits.
[[nodiscard]] inline std::string format_value(double v) {
    if (v == 0.0) return "0";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
    std::string sci(buf, res.ptr);
    const auto epos = sci.find('e');
    const int exp10 = std::stoi(sci.substr(epos + 1));
    std::string mant = sci.substr(0, epos);
    std::string sign;
    if (mant[0] == '-') {
        sign = "-";
        mant.erase(0, 1);
    }
    std::string digits = mant;
    digits.erase(std::remove(digits.begin(), digits.end(), '.'), digits.end());

    static constexpr std::pair<int, std::string_view> scales[] = {{6, "meg"}, {3, "k"},  {0, ""},   {-3, "m"},
                                                                  {-6, "u"},  {-9, "n"}, {-12, "p"}, {-15, "f"}};
    for (const auto& [s, text] : scales) {
        if (exp10 < s || exp10 >= s + 3) continue;
        // value = d.ddd x 10^exp10 = (digits shifted) x 10^s
        const std::size_t int_len = static_cast<std::size_t>(exp10 - s) + 1;
        std::string d = digits;
        if (d.size() < int_len) d.append(int_len - d.size(), '0');
        std::string out = sign + d.substr(0, int_len);
        if (d.size() > int_len) out += "." + d.substr(int_len);
        return out + std::string(text);
    }
    return sign + mant + "e" + std::to_string(exp10);
}

[[nodiscard]] inline Netlist parse_netlist(std::string_view text) {
    Netlist nl;
    std::set<std::string> names;
    std::size_t line_no = 0;
    std::size_t start = 0;
    bool ended = false;
    while (start <= text.size() && !ended) {
        std::size_t stop = text.find('\n', start);
        if (stop == std::string_view::npos) stop = text.size();
        std::string_view line = text.substr(start, stop - start);
        start = stop + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        struct Token {
            std::string_view text;
            std::size_t column;
        };
        std::vector<Token> toks;
        for (std::size_t i = 0; i < line.size();) {
            if (std::isspace(static_cast<unsigned char>(line[i]))) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            toks.push_back({line.substr(i, j - i), i + 1});
            i = j;
        }
        if (toks.empty()) continue;
        if (toks[0].text[0] == '*') {
            constexpr std::string_view tag = "graph-hash:";
            const auto p = line.find(tag);
            if (p != std::string_view::npos && nl.graph_hash.empty()) {
                std::istringstream is(std::string(line.substr(p + tag.size())));
                is >> nl.graph_hash;
            }
            continue;
        }
        if (detail::lower(toks[0].text) == ".end") {
            ended = true;
            continue;
        }
        if (toks[0].text[0] == '.') throw ParseError(line_no, toks[0].column, "unsupported directive " + std::string(toks[0].text));

        Card card;
        card.name = std::string(toks[0].text);
        card.type = static_cast<char>(std::toupper(static_cast<unsigned char>(card.name[0])));
        auto need = [&](std::size_t count) {
            if (toks.size() != count)
                throw ParseError(line_no, toks.back().column,
                                 std::string("card ") + card.type + " expects " + std::to_string(count - 1) + " fields, got " +
                                     std::to_string(toks.size() - 1));
        };
        auto value_at = [&](const Token& t, std::string_view v) {
            double x = 0.0;
            if (!parse_value(v, x)) throw ParseError(line_no, t.column, "malformed value '" + std::string(v) + "'");
            return x;
        };
        switch (card.type) {
            case 'M': {
                if (toks.size() < 8) need(8);
                for (std::size_t i = 1; i <= 4; ++i) card.terminals.emplace_back(toks[i].text);
                card.model = detail::lower(toks[5].text);
                if (card.model != "nmos" && card.model != "pmos")
                    throw ParseError(line_no, toks[5].column, "unknown model " + std::string(toks[5].text));
                for (std::size_t i = 6; i < toks.size(); ++i) {
                    const auto eq = toks[i].text.find('=');
                    if (eq == std::string_view::npos) throw ParseError(line_no, toks[i].column, "expected key=value");
                    std::string key(toks[i].text.substr(0, eq));
                    for (auto& c : key) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                    if (key != "W" && key != "L" && key != "M")
                        throw ParseError(line_no, toks[i].column, "unknown transistor parameter " + key);
                    card.params[key] = value_at(toks[i], toks[i].text.substr(eq + 1));
                }
                if (!card.params.contains("W") || !card.params.contains("L"))
                    throw ParseError(line_no, toks[0].column, "transistor needs W and L");
                if (card.params["W"] <= 0 || card.params["L"] <= 0)
                    throw ParseError(line_no, toks[0].column, "transistor W and L must be positive");
                break;
            }
            case 'C':
            case 'R':
            case 'I':
                need(4);
                card.terminals = {std::string(toks[1].text), std::string(toks[2].text)};
                card.params["value"] = value_at(toks[3], toks[3].text);
                break;
            default:
                throw ParseError(line_no, toks[0].column, "unknown card type '" + std::string(1, card.type) + "'");
        }
        if (!names.insert(card.name).second) throw ParseError(line_no, toks[0].column, "duplicate device " + card.name);
        for (const auto& t : card.terminals) nl.nets.insert(t);
        nl.cards.push_back(std::move(card));
    }
    return nl;
}

[[nodiscard]] inline std::string emit_netlist(const Netlist& nl) {
    std::ostringstream os;
    os << "* graph-hash: " << nl.graph_hash << '\n';
    for (const auto& c : nl.cards) {
        os << c.name;
        for (const auto& t : c.terminals) os << ' ' << t;
        if (c.type == 'M') {
            os << ' ' << c.model;
            for (const auto& [k, v] : c.params) os << ' ' << k << '=' << format_value(v);
        } else {
            os << ' ' << format_value(c.value());
        }
        os << '\n';
    }
    os << ".end\n";
    return os.str();
}

}  // namespace cktdiffuse
