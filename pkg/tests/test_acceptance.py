"""End-to-end acceptance checks, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see lines as
they happen; a summary block is printed at the end either way).  Set
``EZAG_FULL=1`` to include the N=4096 hierarchy point.
"""

import functools
import math
import os
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.stats import linregress

from ezag.baselines import run_plain_rw
from ezag.harness import (
    BUILTIN_SPECS,
    LINK_CHANGE_REFERENCE,
    ExperimentSpec,
    connected_world,
    run_experiment,
    run_link_trial,
    run_protocol_trial,
)
from ezag.hierarchy import HierarchyConfig, hierarchy_world, levels_for, run_hier
from ezag.oracles import gossip_advantage, gossip_projection, markov_cover_expectation, predicted_hier_messages
from ezag.protocol import flood_request, push_phase, run_ezag
from ezag.synopsis import Kind, OdiSynopsis
from ezag.world import DEFAULT_DENSITY, World

pytestmark = pytest.mark.acceptance

RD = "random_direction"


@functools.lru_cache(maxsize=None)
def batch(protocol, n, model=RD, speed=9.0, trials=50, mode="oracle", horizon=600.0):
    spec = ExperimentSpec("acceptance", protocols=(protocol,), mode=mode, horizon=horizon)
    return [run_protocol_trial(spec, protocol, n, model, speed if model != "static" else 0.0, s) for s in range(trials)]


def median(rows, key):
    vals = [r[key] for r in rows if not (isinstance(r[key], float) and math.isnan(r[key]))]
    return float(np.median(vals)) if vals else math.nan


def fmt(d):
    return ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items())


# -- 1 ---------------------------------------------------------------------------------------

CASES = 10_000
ids = st.lists(st.integers(0, 2**40), max_size=12)
scalars = st.lists(st.integers(-(2**31), 2**31), min_size=1, max_size=4)


def _syn(kind, xs):
    return OdiSynopsis.of(kind, xs, m=64, hash_seed=7) if kind is Kind.COUNT_SKETCH else OdiSynopsis.of(kind, xs)


kinds = st.sampled_from([Kind.MAX, Kind.MIN, Kind.COUNT_SKETCH])
many = settings(max_examples=CASES, deadline=None, database=None, suppress_health_check=list(HealthCheck))


@many
@given(kinds, scalars, scalars)
def _idempotent(kind, a, _b):
    x = _syn(kind, a)
    assert x.merge(x) == x


@many
@given(kinds, scalars, scalars)
def _commutative(kind, a, b):
    x, y = _syn(kind, a), _syn(kind, b)
    assert x.merge(y) == y.merge(x)


@many
@given(kinds, scalars, scalars, scalars)
def _associative(kind, a, b, c):
    x, y, z = _syn(kind, a), _syn(kind, b), _syn(kind, c)
    assert x.merge(y).merge(z) == x.merge(y.merge(z))


@many
@given(ids, st.integers(1, 4), st.randoms(use_true_random=False))
def _duplicate_invariant(xs, copies, rnd):
    stream = xs * copies
    rnd.shuffle(stream)
    assert _syn(Kind.COUNT_SKETCH, stream) == _syn(Kind.COUNT_SKETCH, xs)


def test_01_semilattice_laws(verdict):
    failures = []
    for law in (_idempotent, _commutative, _associative, _duplicate_invariant):
        try:
            law()
        except AssertionError as e:  # hypothesis re-raises the minimal failing case
            failures.append(f"{law.__name__}: {e}")
    verdict(1, "semilattice laws", not failures, f"4 laws x {CASES} cases, failures={failures or 0}")


# -- 2 ---------------------------------------------------------------------------------------


def test_02_exact_flood_counts(verdict):
    got = {}
    for n in (1, 10, 100):
        w = World.from_positions([[1.0, 1.0]], 1.0, 2.0) if n == 1 else connected_world(n, DEFAULT_DENSITY, 0)
        s = run_ezag(w, seed=0)
        k = {str(kind): v for kind, v in s.messages_by_kind.items()}
        got[n] = (flood_request(w), push_phase(w)[0], k["AGG_REQUEST_FLOOD"], k["PUSH"], k["RESULT_FLOOD"])
    ok = all(all(v == n for v in vals) for n, vals in got.items())
    verdict(2, "flood/push/result counts equal N", ok, str(got))


# -- 3 ---------------------------------------------------------------------------------------


def test_03_srrw_visit_variance(verdict):
    med = {n: median(batch("srrw", n, trials=20), "visit_variance") for n in (100, 400, 1000)}
    verdict(3, "self-repelling visit variance < 1", all(v < 1 for v in med.values()), fmt(med))


# -- 4 ---------------------------------------------------------------------------------------


def test_04_srrw_overhead_profile(verdict):
    at85 = {n: median(batch("srrw", n), "overhead_85") for n in (100, 500, 1000)}
    at100 = {n: median(batch("srrw", n), "overhead_100") for n in (100, 200, 400, 800)}
    band = all(0.95 <= v <= 1.15 for v in at85.values())
    floor = all(v >= 1.3 for v in at100.values())
    seq = [at100[n] for n in (100, 200, 400, 800)]
    rising = all(b > a for a, b in zip(seq, seq[1:]))
    detail = f"85%: {fmt(at85)}; 100%: {fmt(at100)}; band={band} floor={floor} rising={rising}"
    verdict(4, "self-repelling overhead profile", band and floor and rising, detail)


# -- 5 and 7 ---------------------------------------------------------------------------------

HEADLINE_N = (100, 500, 1000)


def test_05_ezag_headline(verdict):
    med, below, xs, ys = {}, {}, [], []
    for n in HEADLINE_N:
        rows = batch("ezag", n)
        ov = [r["overhead_100"] for r in rows]
        med[n] = float(np.median(ov))
        below[n] = float(np.mean([v < 1 for v in ov]))
        xs += [n] * len(ov)
        ys += ov
    fit = linregress(xs, ys)
    one_sided_p = fit.pvalue / 2 if fit.slope > 0 else 1 - fit.pvalue / 2
    trend_ok = not (fit.slope > 0 and one_sided_p < 0.05)
    ok = all(0.6 <= v <= 0.9 for v in med.values()) and all(f >= 0.95 for f in below.values()) and trend_ok
    detail = f"median {fmt(med)}; frac<1 {fmt(below)}; slope={fit.slope:.2e} p={one_sided_p:.3f}"
    verdict(5, "EZ-AG full-coverage overhead", ok, detail)


def test_07_request_economy(verdict):
    per = {}
    for n in HEADLINE_N:
        rows = batch("ezag", n)
        per[n] = sum(r["msg_token_request"] for r in rows) / sum(r["transfers"] for r in rows)
    verdict(7, "token requests per transfer in [1, 3]", all(1 <= v <= 3 for v in per.values()), fmt(per))


# -- 6 ---------------------------------------------------------------------------------------


def test_06_termination_rule(verdict):
    rows = batch("ezag", 500, mode="terminate")
    frac = float(np.mean([r["complete"] for r in rows]))
    exact = all(r["transfers"] == 500 for r in rows)
    verdict(6, "stop after N transfers covers everyone", frac >= 0.95 and exact, f"complete fraction={frac:.3f}, all N transfers={exact}")


# -- 8 ---------------------------------------------------------------------------------------


def test_08_message_linearity(verdict):
    sizes = (100, 200, 400, 800)
    totals = [median(batch("ezag", n, trials=20), "total_messages") for n in sizes]
    fit = linregress(sizes, totals)
    per_node = [t / n for t, n in zip(totals, sizes)]
    mean = float(np.mean(per_node))
    spread = max(abs(p - mean) / mean for p in per_node)
    ok = fit.rvalue ** 2 >= 0.98 and spread <= 0.2
    verdict(8, "messages grow linearly in N", ok, f"R^2={fit.rvalue ** 2:.4f}, per-node={[round(p, 2) for p in per_node]}, max dev={spread:.3f}")


# -- 9 ---------------------------------------------------------------------------------------


def test_09_mobility_helps(verdict):
    speeds = (3.0, 9.0, 15.0, 21.0)
    med = [median(batch("ezag", 500, speed=v, trials=30), "overhead_100") for v in speeds]
    rises = [b - a for a, b in zip(med, med[1:]) if b > a]
    ok = len(rises) == 0 or (len(rises) == 1 and rises[0] <= 0.03)
    verdict(9, "overhead non-increasing in speed", ok, ", ".join(f"{v:g}m/s={m:.3f}" for v, m in zip(speeds, med)))


# -- 10 --------------------------------------------------------------------------------------


def test_10_mobility_model_robustness(verdict):
    med = {m: median(batch("ezag", 500, model=m, trials=30), "overhead_100") for m in (RD, "random_waypoint", "gauss_markov")}
    ok = all(abs(med[m] - med[RD]) <= 0.2 for m in med)
    verdict(10, "other mobility models within 0.2", ok, fmt(med))


# -- 11 --------------------------------------------------------------------------------------


def test_11_plain_walk_contrast(verdict):
    rw = batch("plain_rw", 500, model="static", trials=20, horizon=1200.0)
    sr = batch("srrw", 500, model="static", trials=20, horizon=1200.0)
    mv = (median(rw, "max_visits"), median(sr, "max_visits"))
    ov = (median(rw, "overhead_100"), median(sr, "overhead_100"))
    ok = mv[0] > mv[1] and ov[0] > 2 * ov[1]
    verdict(11, "plain walk has longer tail and > 2x overhead", ok, f"max visits rw/srrw={mv}, overhead rw/srrw=({ov[0]:.2f}, {ov[1]:.2f})")


# -- 12 --------------------------------------------------------------------------------------


def test_12_plain_walk_matches_markov_expectation(verdict):
    ring = World.from_positions([[0, 0], [1, 0], [1, 1], [0, 1]], comm_range=1.2, area_side=2)
    angles = np.linspace(0, 2 * np.pi, 4, endpoint=False)
    clique = World.from_positions(np.column_stack((1 + np.cos(angles), 1 + np.sin(angles))), comm_range=3.0, area_side=2.5)
    runs = 100_000
    res = {}
    for name, w in (("4-cycle", ring), ("4-clique", clique)):
        exact = markov_cover_expectation(w.all_neighbors())
        sim = float(np.mean([run_plain_rw(w, seed=s).transfers for s in range(runs)]))
        res[name] = (sim, exact, abs(sim - exact) / exact)
    ok = all(err <= 0.02 for _, _, err in res.values())
    verdict(12, "plain walk cover steps match exact DP", ok, "; ".join(f"{k}: sim={a:.4f} exact={b:.4f} err={c:.4f}" for k, (a, b, c) in res.items()))


# -- 13 --------------------------------------------------------------------------------------


def test_13_tree_comparison(verdict):
    tree_s = median(batch("tree", 200, model="static", trials=20), "total_messages")
    ez_s = median(batch("ezag", 200, model="static", trials=20), "total_messages")
    ratios = {}
    for n in (100, 200, 400, 800):
        t = median(batch("tree", n, speed=15.0, trials=20), "total_messages")
        e = median(batch("ezag", n, speed=15.0, trials=20), "total_messages")
        ratios[n] = t / e
    seq = list(ratios.values())
    ok = tree_s < ez_s and all(b > a for a, b in zip(seq, seq[1:])) and seq[-1] > 1
    verdict(13, "tree vs EZ-AG messages", ok, f"static N=200 tree={tree_s:.0f} ezag={ez_s:.0f}; 15 m/s ratio {fmt(ratios)}")


# -- 14 --------------------------------------------------------------------------------------


def test_14_link_change_calibration(verdict):
    spec = ExperimentSpec("lc", kind="link_change")
    got = {}
    for n, v in ((100, 3), (500, 9), (1000, 9)):
        rates = [run_link_trial(spec, n, RD, float(v), s)["link_changes_per_node_s"] for s in range(3)]
        got[(n, v)] = (float(np.mean(rates)), LINK_CHANGE_REFERENCE[(n, v)])
    ok = all(0.5 * ref <= r <= 1.5 * ref for r, ref in got.values())
    verdict(14, "link changes within 50% of reference", ok, "; ".join(f"N={n},{v}m/s: {r:.2f} vs {ref}" for (n, v), (r, ref) in got.items()))


# -- 15 --------------------------------------------------------------------------------------


def _hier_constant(n, seeds):
    cs, ratios, speedups = [], [], []
    for s in seeds:
        r = run_hier(hierarchy_world(n, 16, seed=s), config=HierarchyConfig(delta=16), seed=s)
        cs.append(r.total_messages / r.predicted_messages)
        ratios.append(r.transfer_ratios())
        t = [lv.median_completion for lv in r.levels]
        speedups.append(t[1] / t[0])
    return float(np.median(cs)), np.median(np.array(ratios), axis=0), float(np.median(speedups))


def test_15_hierarchy_scaling(verdict):
    c_mid, ratios, speedup = _hier_constant(1024, range(20))
    others = {256: _hier_constant(256, range(20))[0]}
    if os.environ.get("EZAG_FULL"):
        others[4096] = _hier_constant(4096, range(3))[0]
    c_ok = all(abs(c / c_mid - 1) <= 0.3 for c in others.values())
    r_ok = all(2.5 <= x <= 5.5 for x in ratios)
    ok = c_ok and r_ok and speedup >= 2.5
    detail = f"C(1024)={c_mid:.2f}, C at {fmt(others)}; level transfer ratios={np.round(ratios, 2).tolist()}; level1/level0 time={speedup:.2f}"
    verdict(15, "hierarchy message and time scaling", ok, detail)


# -- 16 --------------------------------------------------------------------------------------


def test_16_analytic_models(verdict):
    checks = [
        predicted_hier_messages(16, 16) == 16,
        predicted_hier_messages(1024, 16) == 4096,
        all(predicted_hier_messages(16 * 4**p, 16) == 16 * 4**p * (p + 1) for p in range(6)),
        levels_for(1024, 16) == 4,
        gossip_projection(2, 5.4) == 2 * math.log(2) ** 5.4,
        gossip_projection(1000, 1.0) == 1000 * math.log(1000),
        math.isclose(gossip_advantage(4000, 5.4), math.log(4000) ** 4.4, rel_tol=1e-12),
    ]
    verdict(16, "analytic message models", all(checks), f"{sum(checks)}/{len(checks)} exact")


# -- 17 --------------------------------------------------------------------------------------


def test_17_determinism(verdict, tmp_path):
    same = {}
    for name in ("fig2b", "table1", "hierarchy"):
        spec = replace(BUILTIN_SPECS[name], trials=1)
        if name == "fig2b":
            spec = replace(spec, trials=2)
        a = run_experiment(spec, tmp_path / f"{name}-a")
        b = run_experiment(spec, tmp_path / f"{name}-b")
        same[name] = a.trials_csv.read_bytes() == b.trials_csv.read_bytes() and a.summary_csv.read_bytes() == b.summary_csv.read_bytes()
    verdict(17, "identical seeds give identical CSVs", all(same.values()), str(same))
