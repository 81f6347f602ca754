"""Smoke test for the triq_py extension.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or
build the cdylib with `--features extension-module` and put
`libtriq_py.so` on the path as `triq_py.so`.
"""

import json
import math
import os
import sys
import tempfile

import triq_py


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok: {msg}")


def main():
    dn = triq_py.Norm.deep_norm(3, [8, 8], seed=1)
    x = [0.3, -1.2, 2.0]
    check(dn.input_dim == 3, "deep norm input dim")
    check(dn(x) >= 0.0, "deep norm is non-negative")
    check(abs(dn([2 * v for v in x]) - 2 * dn(x)) < 1e-9 * max(1.0, dn(x)), "deep norm is homogeneous")
    check(dn.batch([x, x]) == [dn(x), dn(x)], "batch agrees with single evaluation")

    wn = triq_py.Norm.wide_norm(3, 8, 4, asymmetric=True, seed=2)
    check(all(n == 0 for _, n in wn.check_axioms(samples=2000)), "wide norm keeps its guarantees")

    spec = json.loads(wn.spec())
    check(spec["kind"] == "wide_norm", "spec round trips as JSON")
    same = triq_py.Norm(wn.spec(), 2)
    check(same(x) == wn(x), "same spec and seed give the same head")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "wn.json")
        wn.save(path)
        check(triq_py.Norm.load(path)(x) == wn(x), "save and load")

    d = [[0.0, 1.0, 3.0], [1.0, 0.0, 1.0], [3.0, 1.0, 0.0]]
    check(triq_py.count_triangle_violations(d) > 0, "input breaks the triangle inequality")
    fixed, distortion, violations = triq_py.triangle_fix(d, max_iters=10_000, tol=1e-12)
    check(violations == 0, "triangle fixing removes violations")
    check(abs(fixed[0][2] - 8 / 3) < 1e-6, "triangle fixing finds the nearest metric")
    check(math.isfinite(distortion), "distortion is finite")

    with tempfile.TemporaryDirectory() as tmp:
        report = json.loads(triq_py.run_experiment('experiment = "axioms"\nseeds = [1]\n', tmp))
        check(len(report["seeds"]) == 1, "axioms experiment runs")

    try:
        triq_py.Norm.deep_norm(3, [8], activation="nope")
    except ValueError:
        check(True, "bad activation raises ValueError")
    else:
        check(False, "bad activation raises ValueError")

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
