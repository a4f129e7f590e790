"""The twelve acceptance criteria at their stated tolerances.

Each test records one line (criterion, pass/fail, key numbers) that the
session summary prints, then asserts.  Checks share one ModelContext per
model so curves and local samples are computed once.
"""

import json
import math
import time

import numpy as np
import pytest

import oracles
from rgl.cli import main
from rgl.flow_models import parse_model
from rgl.lfunction import solve_l
from rgl.verifier import ModelContext, merge_config, run_check

ALL = ["flat:2", "flat:3", "sphere:2:1", "cylinder:1", "cigar:1"]


@pytest.fixture(scope="module")
def contexts():
    cfg = merge_config(None)
    return {name: ModelContext(parse_model(name), cfg) for name in ALL}


def record(log, num, title, ok, detail):
    log[num] = (title, bool(ok), detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {num}. {title}: {detail}")


def checks(contexts, cid, models=ALL):
    return {name: run_check(cid, contexts[name]) for name in models}


def summary(recs, key):
    def fmt(r):
        val = r["measured"].get(key)
        return f"{val:.3g}" if isinstance(val, (int, float)) else r["status"]

    return ", ".join(f"{m}={fmt(r)}" for m, r in recs.items())


def test_01_flat_closed_form(acceptance_log):
    t0 = time.perf_counter()
    worst_l = worst_g = 0.0
    for n in (2, 3):
        m = parse_model(f"flat:{n}")
        rng = np.random.default_rng(100 + n)
        p = np.zeros(n)
        for _ in range(100):
            q = rng.uniform(-2, 2, size=n)
            tau = rng.uniform(0.1, 2.0)
            res = solve_l(m, p, q, tau)
            exact = oracles.flat_l(p, q, tau)
            worst_l = max(worst_l, abs(res.l_value - exact) / exact)
            g = oracles.flat_grad(p, q, tau)
            worst_g = max(worst_g, np.linalg.norm(res.gradient - g) / np.linalg.norm(g))
    dt = time.perf_counter() - t0
    ok = worst_l <= 1e-5 and worst_g <= 1e-4 and dt < 30
    record(acceptance_log, 1, "flat closed form", ok,
           f"max rel err l={worst_l:.2e} (1e-5), grad={worst_g:.2e} (1e-4), {dt:.1f}s (<30s)")
    assert ok


def test_02_flat_reduced_volume_rigidity(contexts, acceptance_log):
    t0 = time.perf_counter()
    rv = checks(contexts, "reduced_volume", ["flat:2", "flat:3"])
    pw = checks(contexts, "pointwise_jacobian", ["flat:2", "flat:3"])
    dt = time.perf_counter() - t0
    parts = []
    ok = dt < 120
    for name in rv:
        n = contexts[name].model.dim
        vals = np.asarray(rv[name]["measured"]["values"])
        exact = (4 * math.pi) ** (n / 2)
        dev = float(np.max(np.abs(vals / exact - 1)))
        spread = float((vals.max() - vals.min()) / exact)
        eq = pw[name]["measured"]["max_relative_deviation_from_gaussian"]
        ok &= dev <= 5e-3 and spread <= 1e-3 and eq <= 1e-6 and pw[name]["measured"]["fraction_monotone"] == 1
        parts.append(f"{name}: V={vals[0]:.6f} dev={dev:.1e} spread={spread:.1e} pointwise={eq:.1e}")
    record(acceptance_log, 2, "flat reduced volume = (4 pi)^(n/2)", ok, "; ".join(parts) + f"; {dt:.1f}s")
    assert ok


def test_03_monotonicity(contexts, acceptance_log):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for name in ["sphere:2:1", "cylinder:1", "cigar:1"]:
        c = contexts[name].curve()
        mono = c.nonincreasing(2.0)
        below = bool(np.all(c.values <= c.bound + c.errors))
        strict = c.strictly_decreasing(2.0)
        ok &= mono and below and (strict or name != "sphere:2:1")
        parts.append(f"{name}: " + "/".join(f"{v:.4f}±{e:.1e}" for v, e in zip(c.values, c.errors))
                     + f" mono={mono} strict={strict}")
    dt = time.perf_counter() - t0
    ok &= dt < 600
    record(acceptance_log, 3, "reduced volume monotone", ok, "; ".join(parts) + f"; {dt:.1f}s")
    assert ok


def test_04_pointwise_jacobian(contexts, acceptance_log):
    recs = checks(contexts, "pointwise_jacobian")
    ok = all(r["status"] == "pass" for r in recs.values())
    ok &= all(r["measured"]["fraction_monotone"] >= 0.99 for r in recs.values())
    record(acceptance_log, 4, "pointwise Jacobian monotone", ok, summary(recs, "fraction_monotone"))
    assert ok


def test_05_jacobian_limit(contexts, acceptance_log):
    recs = checks(contexts, "jacobian_limit")
    worst = max(r["measured"]["max_relative_error"] for r in recs.values())
    ok = worst <= 5e-3 and all(r["status"] == "pass" for r in recs.values())
    record(acceptance_log, 5, "Jacobian limit 2^n exp(-|v|^2)", ok, f"max rel err {worst:.2e} (5e-3)")
    assert ok


def test_06_identity_and_inequalities(contexts, acceptance_log):
    ident = checks(contexts, "evolution_identity")
    ineq = checks(contexts, "differential_inequalities")
    ok = all(r["status"] == "pass" for r in list(ident.values()) + list(ineq.values()))
    detail = "residual " + summary(ident, "max_residual") + "; heat slack min " + summary(ineq, "min_heat_slack")
    record(acceptance_log, 6, "evolution identity and inequalities", ok, detail)
    assert ok


def test_07_min_l(contexts, acceptance_log):
    recs = checks(contexts, "min_l")
    ok = all(r["status"] == "pass" for r in recs.values())
    detail = ", ".join(f"{m}={max(r['measured']['min_l'].values()):.4f}<= {contexts[m].model.dim / 2}"
                       for m, r in recs.items())
    record(acceptance_log, 7, "min l <= n/2", ok, detail)
    assert ok


def test_08_scaling(contexts, acceptance_log):
    recs = checks(contexts, "scaling")
    ok = all(r["status"] == "pass" for r in recs.values())
    record(acceptance_log, 8, "scaling invariance", ok, "max rel l " + summary(recs, "max_relative_l"))
    assert ok


def test_09_weak_integrals(contexts, acceptance_log):
    r = run_check("weak_integral", contexts["sphere:2:1"])
    m = r["measured"]
    ok = r["status"] == "pass" and m["relative_gaussian"] <= 1e-2
    ok &= m["bump_heat"] >= -1e-2 * m["bump_heat_scale"]
    record(acceptance_log, 9, "weak integrals on sphere", ok,
           f"Gaussian-weight rel diff {m['relative_gaussian']:.2e}; bump heat {m['bump_heat']:.3g} "
           f"(scale {m['bump_heat_scale']:.3g}); bump elliptic {m['bump_elliptic']:.3g}")
    assert ok


def test_10_soliton_residual(contexts, acceptance_log):
    recs = checks(contexts, "soliton_residual", ["flat:2", "flat:3", "sphere:2:1"])
    ok = all(r["status"] == "pass" for r in recs.values())
    ok &= recs["sphere:2:1"]["measured"]["min_residual"] > 1e-2
    for name in ("flat:2", "flat:3"):
        ok &= recs[name]["measured"]["max_residual"] < 1e-8 and recs[name]["measured"]["max_abs_v"] < 1e-8
    record(acceptance_log, 10, "soliton residual", ok, "max residual " + summary(recs, "max_residual"))
    assert ok


def test_11_cross_method(contexts, acceptance_log):
    recs = checks(contexts, "cross_method")
    worst = max(r["measured"]["max_relative_difference"] for r in recs.values())
    ok = worst <= 1e-4 and all(r["parameters"]["instances"] == 30 for r in recs.values())
    record(acceptance_log, 11, "shooting vs path oracle", ok, f"max rel diff {worst:.2e} (1e-4), 30 per model")
    assert ok


def test_12_determinism(tmp_path, acceptance_log):
    outs = []
    codes = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        codes.append(main(["verify", "--models", "flat:2,sphere:2:1", "--out", str(path)]))
        data = json.loads(path.read_text())
        data["metadata"].pop("runtime_s", None)
        for r in data["records"]:
            r.pop("runtime_s", None)
        outs.append(json.dumps(data, sort_keys=True))
    ok = outs[0] == outs[1] and codes == [0, 0]
    record(acceptance_log, 12, "verify is deterministic", ok,
           f"exit codes {codes}, identical={outs[0] == outs[1]}, {len(json.loads(outs[0])['records'])} records")
    assert ok
