#!/usr/bin/env python3
"""Convert a MATPOWER-format case into the line-oriented grid case format.

Accepts either a MATPOWER `.m` case file or a PYPOWER `.py` case module
(for example `pypower/case118.py`). Only polynomial (model 2) costs of
degree <= 2 are supported. Out-of-service branches and generators are
skipped. Bus shunts are converted from MW/MVAr at 1 p.u. to per-unit.

    python3 scripts/matpower_to_case.py case118.py > cases/ieee118.case
"""

import re
import sys

BUS_TYPES = {1: "pq", 2: "pv", 3: "slack"}


def parse_m(text):
    def matrix(name):
        m = re.search(r"mpc\.%s\s*=\s*\[(.*?)\];" % name, text, re.S)
        if not m:
            return []
        rows = []
        for line in m.group(1).splitlines():
            line = line.split("%")[0].strip().rstrip(";")
            if line:
                rows.append([float(v) for v in line.split()])
        return rows

    base = float(re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)", text).group(1))
    return {
        "baseMVA": base,
        "bus": matrix("bus"),
        "gen": matrix("gen"),
        "branch": matrix("branch"),
        "gencost": matrix("gencost"),
    }


def parse_py(path):
    scope = {}
    with open(path) as fh:
        exec(fh.read(), scope)
    fn = [v for k, v in scope.items() if k.startswith("case") and callable(v)][0]
    ppc = fn()
    return {k: (ppc[k].tolist() if hasattr(ppc[k], "tolist") else ppc[k])
            for k in ("baseMVA", "bus", "gen", "branch", "gencost")}


def fmt(v):
    v = float(v)
    return repr(int(v)) if v == int(v) else repr(v)


def convert(ppc, source):
    base = ppc["baseMVA"]
    out = ["# converted from %s" % source, "BASE", fmt(base), "", "BUS",
           "# id, type, p_load, q_load, v_min, v_max, g_shunt, b_shunt"]
    for b in ppc["bus"]:
        out.append(", ".join([
            str(int(b[0])), BUS_TYPES[int(b[1])], fmt(b[2]), fmt(b[3]),
            fmt(b[12]), fmt(b[11]), fmt(b[4] / base), fmt(b[5] / base)]))
    out += ["", "BRANCH", "# from, to, r, x, b_charging, tap"]
    for br in ppc["branch"]:
        if len(br) > 10 and br[10] == 0:
            continue
        if len(br) > 9 and br[9] != 0:
            raise SystemExit("phase shifters are not supported")
        tap = br[8] if br[8] != 0 else 1.0
        out.append(", ".join([str(int(br[0])), str(int(br[1])),
                              fmt(br[2]), fmt(br[3]), fmt(br[4]), fmt(tap)]))
    out += ["", "GEN", "# bus, p_min, p_max, q_min, q_max, a, b, c"]
    for g, c in zip(ppc["gen"], ppc["gencost"]):
        if g[7] == 0:
            continue
        if int(c[0]) != 2:
            raise SystemExit("only polynomial costs are supported")
        coeffs = list(c[4:4 + int(c[3])])
        coeffs = [0.0] * (3 - len(coeffs)) + coeffs
        if len(coeffs) != 3:
            raise SystemExit("cost degree above 2 is not supported")
        out.append(", ".join([str(int(g[0])), fmt(g[9]), fmt(g[8]), fmt(g[4]),
                              fmt(g[3]), fmt(coeffs[0]), fmt(coeffs[1]), fmt(coeffs[2])]))
    return "\n".join(out) + "\n"


def main():
    if len(sys.argv) != 2:
        raise SystemExit(__doc__)
    path = sys.argv[1]
    if path.endswith(".py"):
        ppc = parse_py(path)
    else:
        with open(path) as fh:
            ppc = parse_m(fh.read())
    sys.stdout.write(convert(ppc, path.split("/")[-1]))


if __name__ == "__main__":
    main()
