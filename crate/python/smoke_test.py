"""Smoke test for the kamlab Python module.

Build and install first:  maturin develop --release -m crates/python/Cargo.toml
"""

import json
import math
import pathlib
import sys
import tempfile

import kamlab


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")
    print(f"ok  {msg}")


def main():
    check("mechanical" in kamlab.list_models(), "built-in models listed")

    g = kamlab.Grid(1, 16)
    check(len(g) == 16 and g.coords(4) == [0.25], "grid nodes")
    check(g.nearest_node([1.24]) == 4, "nearest node wraps")

    p = kamlab.Problem("mechanical", 32, vmax=3.0, m=17, potential_u="cos(1)")
    c = p.anchor()
    check(abs(c - 1.0) < 1e-2, f"critical value {c:.6f} close to max U = 1")
    check(abs(p.critical - c) == 0.0, "model re-anchored")

    est = p.critical_values(["lp", "discount"])
    check(abs(est["lp"] - est["discount"]) < 0.05, f"lp/discount agree: {est}")

    u, rep = p.solve(0.1)
    check(rep.converged and len(u) == 32, f"discounted solve: {rep}")

    h = p.barrier()
    check(h.nodes == 32, "barrier size")
    check(h.aubry_set(1e-6) == [0], "Aubry set at the top of U")
    check(abs(h.value(0, 0)) < 1e-9, "zero diagonal on the Aubry set")
    exact = 2 / math.pi * (1 - math.cos(math.pi * 0.5))
    check(abs(h.value(0, 16) - exact) < 0.1, f"h(0, 1/2) = {h.value(0, 16):.4f} vs {exact:.4f}")

    try:
        kamlab.Problem("no_such_model", 8)
    except ValueError as e:
        check("no_such_model" in str(e), "unknown model raises ValueError")
    else:
        sys.exit("FAIL: unknown model accepted")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp, "suite.toml")
        cfg.write_text(
            'kind = "barrier_suite"\n'
            '[model]\nname = "mechanical"\npotential_u = "cos(1)"\n'
            "[grid]\nd = 1\nn = 16\n[vset]\nvmax = 3.0\nm = 9\n"
            '[critical]\nmethods = ["lp"]\n'
            "[thresholds]\ncolumn_residual = 1e-6\n"
        )
        check(kamlab.validate_config(str(cfg)) == "barrier_suite", "config validates")
        out, manifest = kamlab.run_experiment(str(cfg), output=str(pathlib.Path(tmp, "out")))
        m = json.loads(manifest)
        check(m["pass"] and pathlib.Path(out, "manifest.json").is_file(), "experiment run writes artifacts")

    print("smoke test passed")


if __name__ == "__main__":
    main()
