"""Reference normalizer for the SPICE subset: canonical spacing, lower-case
models, sorted W/L/M keys and shortest-round-trip values with engineering
suffixes. Written independently of the C++ emitter; its output is frozen as
tests/data/golden.normalized.sp."""
import sys
from decimal import Decimal

SUFFIX = {"f": -15, "p": -12, "n": -9, "u": -6, "m": -3, "k": 3, "meg": 6}
SCALES = [(6, "meg"), (3, "k"), (0, ""), (-3, "m"), (-6, "u"), (-9, "n"), (-12, "p"), (-15, "f")]


def parse_value(tok):
    low = tok.lower()
    for suf in ("meg", "f", "p", "n", "u", "m", "k"):
        if low.endswith(suf) and not low.endswith("e" + suf):
            return float(Decimal(low[: -len(suf)]).scaleb(SUFFIX[suf]))
    return float(Decimal(low))


def fmt(x):
    if x == 0:
        return "0"
    sign, digits, exp = Decimal(repr(x)).normalize().as_tuple()
    digits = "".join(map(str, digits))
    exp10 = exp + len(digits) - 1  # value = d.ddd x 10^exp10
    for s, text in SCALES:
        if s <= exp10 < s + 3:
            n_int = exp10 - s + 1
            d = digits.ljust(n_int, "0")
            out = ("-" if sign else "") + d[:n_int]
            if len(d) > n_int:
                out += "." + d[n_int:]
            return out + text
    return ("-" if sign else "") + digits[0] + ("." + digits[1:] if len(digits) > 1 else "") + "e%d" % exp10


def normalize(text):
    graph_hash = ""
    out = []
    for line in text.splitlines():
        toks = line.split()
        if not toks:
            continue
        if toks[0].startswith("*"):
            if "graph-hash:" in line and not graph_hash:
                graph_hash = line.split("graph-hash:")[1].split()[0]
            continue
        if toks[0].lower() == ".end":
            break
        name = toks[0]
        if name[0].upper() == "M":
            params = {}
            for kv in toks[6:]:
                k, v = kv.split("=")
                params[k.upper()] = parse_value(v)
            body = toks[1:5] + [toks[5].lower()] + ["%s=%s" % (k, fmt(params[k])) for k in sorted(params)]
        else:
            body = toks[1:3] + [fmt(parse_value(toks[3]))]
        out.append(" ".join([name] + body))
    return "* graph-hash: %s\n" % graph_hash + "\n".join(out) + "\n.end\n"


if __name__ == "__main__":
    sys.stdout.write(normalize(open(sys.argv[1]).read()))
