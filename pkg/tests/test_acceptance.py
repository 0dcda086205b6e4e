"""Acceptance checks. Every test records one PASS/FAIL line (echoed in the
terminal summary) and fails when its criterion is not met.

Benchmark criteria run the bench pipeline at desk scale. ppDRE
hyperparameters are cross-validated on a reduced grid (lam = 0.5, lr = 0.1,
greedy K up to 5, J in {50, 150} on the 2-D toy and J = 50 elsewhere),
because one pass over the full default grid costs well over an hour on a
single core. Criterion 3 asks for the default grids explicitly, so it runs
them under its own 5 minute budget and stops them there; set
PPDRE_FULL_ACCEPTANCE=1 to let that run finish and report its accuracy
anyway.
"""
import json
import multiprocessing
import os
import queue
import time
from pathlib import Path

import numpy as np
import pytest

from acceptance_log import record
from oracles import brute_force_beta, central_difference, criterion, random_instance
from ppdre import bench
from ppdre.applications import fit_qdrf
from ppdre.baselines import KernelRatioModel
from ppdre.basis import GaussianBasis
from ppdre.estimator import PPRatioModel, empirical_loss, loss_grad, profile_beta
from ppdre.io import StandardizedModel, load_model
from ppdre.metrics import read_report
from ppdre.worlds import gen_dose_response

FULL_ENV = "PPDRE_FULL_ACCEPTANCE"
TOY_GRIDS = {"ppdre": {"J": [50, 150], "lam": [0.5], "lr": [0.1], "K": [5]}}
DESK_GRIDS = {"ppdre": {"J": [50], "lam": [0.5], "lr": [0.1], "K": [5]}}
# bench runs made by the criteria, inspected again by criteria 9 and 10
RUNS: dict[str, tuple[dict, Path]] = {}


def check(number: int, ok: bool, detail: str) -> None:
    line = record(number, ok, detail)
    assert ok, line


@pytest.fixture(scope="module")
def base(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def run_bench(tag, base, scenario, params, methods, seeds, grids=DESK_GRIDS):
    doc = {"scenarios": [{"name": scenario, "params": params}], "methods": methods, "seeds": seeds,
           "grids": grids, "out": str(base / tag)}
    start = time.perf_counter()
    code = bench.run_bench(bench.parse_config(doc))
    elapsed = time.perf_counter() - start
    RUNS[tag] = (doc, base / tag)
    assert code == 0, f"bench run {tag} reported failed cells"
    return read_report(base / tag / "report.csv"), elapsed


def values(records, method, metric):
    return {r.seed: r.value for r in records if r.method == method and r.metric == metric}


def _sorted_instance(r):
    inst = random_instance(r)
    inst["gamma"] = np.sort(inst["gamma"])
    return inst


def _relerr(an, fd):
    return np.abs(an - fd) / np.maximum(np.maximum(np.abs(an), np.abs(fd)), 1e-6)


# ---------------------------------------------------------------------------
# 1-2: analytic oracles

def test_criterion_1_profiled_beta_oracle():
    r = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        inst = _sorted_instance(r)
        beta = profile_beta(inst["a"], GaussianBasis(inst["gamma"]), inst["lam"], inst["w_q"], inst["w_p"],
                            inst["X_q"], inst["X_p"])
        ref = brute_force_beta(inst["a"], inst["gamma"], inst["lam"], inst["w_q"], inst["w_p"],
                               inst["X_q"], inst["X_p"])
        worst = max(worst, float(np.max(np.abs(beta - ref))))
    elapsed = time.perf_counter() - start
    check(1, worst <= 2e-3 and elapsed < 30,
          f"max |beta - brute force| = {worst:.2e} on 200 instances (tol 2e-3), {elapsed:.1f} s (limit 30 s)")


def test_criterion_2_gradient_suite():
    r = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        inst = random_instance(r, J=int(r.integers(1, 6)), n_max=20)
        inst["gamma"] = np.sort(inst["gamma"])
        basis = GaussianBasis(inst["gamma"])
        beta = r.standard_normal(inst["gamma"].size)
        rest = (inst["lam"], inst["w_q"], inst["w_p"], inst["X_q"], inst["X_p"])
        g_a, g_gamma = loss_grad(inst["a"], basis, beta, *rest)
        fd_a = central_difference(lambda a: empirical_loss(a, basis, beta, *rest), inst["a"])
        fd_g = central_difference(lambda g: float(criterion(inst["a"], g, beta, *rest)), inst["gamma"])
        z = float(r.uniform(-3, 3))
        fd_z = central_difference(lambda v: basis.eval(v[0]) @ beta, np.array([z]))[0]
        # entry j of the center derivative depends on gamma_j alone
        fd_c = central_difference(lambda g: np.exp(-0.5 * (z - g) ** 2) @ np.ones_like(g), inst["gamma"])
        worst = max(worst, float(np.max(_relerr(g_a, fd_a))), float(np.max(_relerr(g_gamma, fd_g))),
                    float(np.max(_relerr(np.atleast_1d(basis.eval_dz(z) @ beta), np.atleast_1d(fd_z)))),
                    float(np.max(_relerr(np.ravel(basis.eval_dgamma(z)), fd_c))))
    elapsed = time.perf_counter() - start
    check(2, worst <= 1e-4 and elapsed < 10,
          f"max relative error {worst:.2e} on 50 instances (tol 1e-4), {elapsed:.1f} s (limit 10 s)")


# ---------------------------------------------------------------------------
# 3-8: benchmark criteria

def _default_grid_toy(out):
    cfg = bench.parse_config({"scenarios": [{"name": "toy2d", "params": {"n": 5000}}],
                              "methods": ["ulsif", "ppdre"], "seeds": [0]})
    for method in ("ulsif", "ppdre"):
        recs, runtime, choice = bench.run_unit(cfg.scenarios[0], method, 0, cfg)
        out.put((method, values(recs, method, "rmsle")[0], runtime, choice))


def test_criterion_3_toy_default_grids(base):
    budget = 300.0
    full = os.environ.get(FULL_ENV) == "1"
    ctx = multiprocessing.get_context("fork")
    out = ctx.Queue()
    proc = ctx.Process(target=_default_grid_toy, args=(out,))
    start = time.perf_counter()
    proc.start()
    results = {}
    while len(results) < 2:
        left = None if full else budget - (time.perf_counter() - start)
        if left is not None and left <= 0:
            break
        try:
            method, rmsle, runtime, choice = out.get(timeout=left)
        except queue.Empty:
            break
        results[method] = (rmsle, runtime, choice)
    elapsed = time.perf_counter() - start
    if proc.is_alive():
        proc.terminate()
    proc.join()

    # the reduced grid shows what the estimator reaches in the same setting
    desk, desk_time = run_bench("toy_desk", base, "toy2d", {"n": 5000}, ["ppdre", "ulsif"], [0], TOY_GRIDS)
    desk_note = (f"[desk grid, not the criterion: ppDRE {values(desk, 'ppdre', 'rmsle')[0]:.3f}, "
                 f"uLSIF {values(desk, 'ulsif', 'rmsle')[0]:.3f} in {desk_time:.0f} s]")
    parts = [f"{m} RMSLE {results[m][0]:.3f}" for m in ("ppdre", "ulsif") if m in results]
    done = len(results) == 2
    ok = done and results["ppdre"][0] <= 0.25 and results["ulsif"][0] <= 0.30 and elapsed < budget
    status = f"finished in {elapsed:.0f} s" if done else f"stopped unfinished after {elapsed:.0f} s"
    check(3, ok, f"default grids {status} (limit {budget:.0f} s); "
                 f"{', '.join(parts) or 'no method finished'} (tol ppDRE 0.25, uLSIF 0.30) {desk_note}")


def test_criterion_4_consistency_trend(base):
    seeds = [0, 1, 2, 3, 4]
    small, t_small = run_bench("trend_500", base, "toy2d", {"n": 500}, ["ppdre"], seeds, TOY_GRIDS)
    large, t_large = run_bench("trend_4000", base, "toy2d", {"n": 4000}, ["ppdre"], seeds, TOY_GRIDS)
    m_small = float(np.median(list(values(small, "ppdre", "rmsle").values())))
    m_large = float(np.median(list(values(large, "ppdre", "rmsle").values())))
    elapsed = t_small + t_large
    check(4, m_large <= m_small and elapsed < 900,
          f"median RMSLE n=4000 {m_large:.3f} vs n=500 {m_small:.3f} over 5 seeds, "
          f"{elapsed:.0f} s (limit 900 s)")


def test_criterion_5_mutual_information(base):
    low, t_low = run_bench("mi_p2", base, "mi_gaussian", {"p": 2, "rho": 0.8, "n": 5000}, ["ppdre"], [0])
    high, t_high = run_bench("mi_p10", base, "mi_gaussian", {"p": 10, "rho": 0.2, "n": 5000}, ["ppdre"], [0])
    err_low, err_high = values(low, "ppdre", "mae_mi")[0], values(high, "ppdre", "mae_mi")[0]
    ok = err_low <= 0.25 and err_high <= 0.30 and t_low < 300
    check(5, ok, f"|MI error| p=2 {err_low:.3f} (tol 0.25) in {t_low:.0f} s (limit 300 s); "
                 f"p=10 {err_high:.3f} (tol 0.30) in {t_high:.0f} s")


def test_criterion_6_stabilized_weights(base):
    # a scalar c means c * e_1, the setting of the visual comparison; with
    # c = 0.5 * ones the weight has infinite variance under the joint
    seeds = [0, 1, 2, 3, 4]
    recs, elapsed = run_bench("stabilized", base, "stabilized_weights", {"d_x": 10, "c": 0.5, "n": 5000},
                              ["ppdre", "ulsif"], seeds)
    pp, ul = values(recs, "ppdre", "rmsle"), values(recs, "ulsif", "rmsle")
    wins = sum(pp[s] < ul[s] for s in seeds)
    pairs = ", ".join(f"{pp[s]:.3f}/{ul[s]:.3f}" for s in seeds)
    check(6, wins >= 3 and elapsed < 1200,
          f"d_X=10, c=0.5 e_1: ppDRE beats uLSIF in {wins}/5 seeds (need 3; RMSLE ppDRE/uLSIF {pairs}), "
          f"{elapsed:.0f} s (limit 1200 s)")


def test_criterion_7_covariate_shift(base):
    seeds = list(range(10))
    recs, elapsed = run_bench("friedman", base, "covariate_shift_friedman", {"n": 2000},
                              ["ppdre", "unweighted", "truth"], seeds)
    pp, un, tr = (values(recs, m, "nmse") for m in ("ppdre", "unweighted", "truth"))
    wins = sum(pp[s] <= un[s] for s in seeds)
    oracle_wins = sum(tr[s] <= un[s] for s in seeds)
    check(7, wins >= 6 and elapsed < 1200,
          f"NMSE with ppDRE weights <= unweighted in {wins}/10 seeds (need 6; medians "
          f"{np.median(list(pp.values())):.4f} vs {np.median(list(un.values())):.4f}; exact weights "
          f"win {oracle_wins}/10), {elapsed:.0f} s (limit 1200 s)")


def test_criterion_8_dose_response(base):
    seeds = list(range(10))
    recs, elapsed = run_bench("dose", base, "dose_response", {"n": 2000}, ["truth", "unweighted"], seeds)
    tr, un = values(recs, "truth", "ase"), values(recs, "unweighted", "ase")
    wins = sum(tr[s] <= un[s] for s in seeds)
    # the invariant concerns quantile fits on the same unweighted data; the
    # analytic weights are reported alongside, where a handful of rows carry
    # most of the weight and separately fitted quantile curves may cross
    start = time.perf_counter()
    gaps = {"uniform": np.inf, "analytic": np.inf}
    for seed in range(3):
        world = gen_dose_response(2000, seed=seed, mc_n=10_000)
        grid = np.linspace(world.T.min(), world.T.max(), 50)
        for name, w in (("uniform", np.ones(world.T.size)), ("analytic", world.stabilized_weight())):
            curves = [fit_qdrf(world.T, world.Y, w, tau)(grid) for tau in (0.25, 0.5, 0.75)]
            gaps[name] = min(gaps[name], *(float(np.min(hi - lo)) for lo, hi in zip(curves, curves[1:])))
    elapsed += time.perf_counter() - start
    ok = wins >= 6 and gaps["uniform"] >= -1e-2 and elapsed < 1200
    check(8, ok, f"ASE truth-weighted <= uniform in {wins}/10 seeds (need 6; medians "
                 f"{np.median(list(tr.values())):.4f} vs {np.median(list(un.values())):.4f}); smallest QDRF gap "
                 f"across tau 0.25/0.5/0.75 on 3 seeds {gaps['uniform']:.3g} (tol -1e-2) "
                 f"[analytic weights: {gaps['analytic']:.3g}]; {elapsed:.0f} s (limit 1200 s)")


# ---------------------------------------------------------------------------
# 9-10: invariants and determinism over the runs above

RERUN_GRIDS = {"ppdre": {"J": [20], "lam": [0.5], "lr": [0.1], "K": [3]},
               "ulsif": {"sigma_factors": [0.5, 1.0], "lam": [0.1, 1.0]},
               "kliep": {"sigma_factors": [0.5, 1.0]}}
RERUN_CONFIGS = {
    "rerun_ratio": {"scenarios": [{"name": "toy2d", "params": {"n": 400}},
                                  {"name": "stabilized_weights", "params": {"n": 400}},
                                  {"name": "mi_gaussian", "params": {"n": 400}},
                                  {"name": "dose_response", "params": {"n": 400, "mc_n": 10_000}},
                                  {"name": "covariate_shift_friedman", "params": {"n": 400}}],
                    "methods": ["ppdre", "ulsif", "kliep", "logistic", "truth"], "seeds": [0, 1],
                    "folds": 3, "grids": RERUN_GRIDS},
    "rerun_weighted": {"scenarios": [{"name": "dose_response", "params": {"n": 400, "mc_n": 10_000}},
                                     {"name": "covariate_shift_friedman", "params": {"n": 400}}],
                       "methods": ["unweighted", "truth"], "seeds": [0, 1]},
}


@pytest.fixture(scope="module")
def reruns(base):
    """Each desk-scale rerun config run twice, covering every scenario and method."""
    dirs = {}
    for tag, doc in RERUN_CONFIGS.items():
        for copy in ("a", "b"):
            out = base / f"{tag}_{copy}"
            assert bench.run_bench(bench.parse_config({**doc, "out": str(out)})) == 0
            dirs[(tag, copy)] = out
        RUNS[tag] = ({**doc, "out": str(dirs[(tag, "a")])}, dirs[(tag, "a")])
    return dirs


def _training_samples(name, params, seed, method):
    """Rows the ratio model was fitted on, as (numerator, denominator)."""
    data = bench._scenario_data(name, params, seed)
    if name == "dose_response":
        fit_seed = bench.method_seed(seed, method)
        perm = np.random.default_rng(fit_seed).permutation(data.T.size)
        return np.column_stack([data.T[perm], data.X]), data.joint
    if name.startswith("covariate_shift"):
        return data.X_test, data.X_train
    return data.X_p, data.X_q


def _model_violations(model, X_p, X_q):
    inner = model.model if isinstance(model, StandardizedModel) else model
    problems = []
    if isinstance(inner, PPRatioModel):
        for k, p in enumerate(inner.projections):
            if abs(np.linalg.norm(p.a) - 1.0) > 1e-10:
                problems.append(f"|a_{k}| = {np.linalg.norm(p.a)!r}")
    if isinstance(inner, KernelRatioModel):
        if np.any(inner.theta < 0):
            problems.append(f"{inner.method} theta has negative entries")
        if inner.method == "kliep":
            constraint = float(np.mean(model(X_q)))
            if abs(constraint - 1.0) > 1e-10:
                problems.append(f"kliep constraint {constraint!r}")
    for X in (X_p, X_q):
        if not np.all(model(X) > 0):
            problems.append("nonpositive evaluation")
    return problems


def test_criterion_9_constraint_invariants(reruns):
    checked, problems = 0, []
    methods = set()
    for tag, (doc, out) in sorted(RUNS.items()):
        cfg = bench.parse_config(doc)
        scenarios = {s["name"]: s["params"] for s in cfg.scenarios}
        for path in sorted(out.glob("model_*.json")):
            method = json.loads(path.read_text())["method"]
            name, seed = path.stem[len("model_"):].rsplit(f"_{method}_seed", 1)
            X_p, X_q = _training_samples(name, scenarios[name], int(seed), method)
            issues = _model_violations(load_model(path), X_p, X_q)
            problems += [f"{tag}/{path.name}: {msg}" for msg in issues]
            checked += 1
            methods.add(method)
    ok = checked > 0 and not problems and methods >= {"ppdre", "ulsif", "kliep", "logistic"}
    detail = f"{checked} fitted models from {len(RUNS)} runs (methods {', '.join(sorted(methods))})"
    check(9, ok, detail + (f"; violations: {'; '.join(problems[:5])}" if problems else "; no violations"))


def _bodies(out: Path) -> dict:
    files = sorted(p for p in out.iterdir() if p.suffix in (".csv", ".json") and p.name != "timings.csv")
    return {p.name: p.read_bytes() for p in files}


def test_criterion_10_determinism(reruns):
    mismatched, compared = [], 0
    for tag in RERUN_CONFIGS:
        a, b = _bodies(reruns[(tag, "a")]), _bodies(reruns[(tag, "b")])
        if set(a) != set(b):
            mismatched.append(f"{tag}: different file sets")
        mismatched += [f"{tag}/{name}" for name in a if name in b and a[name] != b[name]]
        compared += len(a)
    check(10, compared > 0 and not mismatched,
          f"{compared} CSV/JSON outputs compared across identical reruns of {len(RERUN_CONFIGS)} configs "
          f"covering every scenario and method" + (f"; differing: {', '.join(mismatched)}" if mismatched else
                                                   "; all byte-identical"))
