"""Acceptance gate: one PASS/FAIL line per criterion.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py`` to print the lines only.
"""

import functools
import sys
import time

import numpy as np
import pytest
from scipy import optimize

from rmap.analytical import J1, J2, quadrature_expectation_of_optimizer
from rmap.diagnostics import convergence_fit, iact_per_component, log_checkpoints, running_mean_errors, tv_distance
from rmap.experiments import run_experiment
from rmap.config import validate
from rmap.helmholtz import make_synthetic_case
from rmap.optimizer import SolverConfig
from rmap.prior import GaussianMeasure
from rmap.problem import InverseProblem, linear_posterior, make_linear_problem
from rmap.rng import CounterStream
from rmap.samplers import importance_weights, metropolize_rmap, rmap_chain, scalar_rmap_samples
from rmap.samplers.dram import DRAMConfig, dram_problem_chain
from rmap.samplers.rto import rto_chain
from rmap.samplers.sn import sn_chain
from rmap.warmstart import map_point


def _line(k, passed, title, detail, seconds):
    return f"criterion {k}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]  ({seconds:.1f}s)"


def _timed(fn):
    t0 = time.perf_counter()
    passed, title, detail = fn()
    return passed, title, detail, time.perf_counter() - t0


# ------------------------------------------------------------ 1
def criterion_1():
    p, B = make_linear_problem(n_params=10, n_obs=6, noise_sigma=0.5, seed=0)
    mean, cov = linear_posterior(p, B)
    n = 10000
    ch = rmap_chain(p, n, seed=1)
    se = np.sqrt(np.diag(cov) / n)
    z = np.abs(ch.samples.mean(axis=0) - mean) / se
    rel = np.linalg.norm(np.cov(ch.samples, rowvar=False) - cov) / np.linalg.norm(cov)
    ok = len(ch) == n and z.max() < 4 and rel < 0.10
    return ok, "linear-Gaussian exactness", f"N=10, n={len(ch)}, max |mean err|/SE={z.max():.2f}, cov rel err={rel:.3f}"


# ------------------------------------------------------------ 2
def criterion_2():
    p, _ = make_linear_problem(n_params=10, n_obs=6, noise_sigma=0.5, seed=0)
    cfg = SolverConfig()
    tol = 10 * max(cfg.eps_x, cfg.eps_g)
    ref = rmap_chain(p, 200, seed=3, cfg=cfg)
    diffs = {}
    for variant in ("qr", "modified"):
        ch = rto_chain(p, 200, variant=variant, seed=3, cfg=cfg)
        same = np.array_equal(ch.meta["theta"], ref.meta["theta"]) and np.array_equal(ch.meta["eps"], ref.meta["eps"])
        diffs[variant] = np.max(np.abs(ch.samples - ref.samples)) if same and len(ch) == len(ref) else np.inf
    ok = all(d <= tol for d in diffs.values())
    detail = ", ".join(f"{k} max diff={v:.1e}" for k, v in diffs.items()) + f", tol={tol:.0e}"
    return ok, "rMAP = RTO on linear problems", detail


# ------------------------------------------------------------ 3
def criterion_3(n_chains=10, n=10**6):
    ref = quadrature_expectation_of_optimizer("J1")
    cps = log_checkpoints(1000, n, per_decade=8)
    errs = np.array([running_mean_errors(scalar_rmap_samples(J1, n, seed=s)[0], ref, cps) for s in range(n_chains)])
    slope = convergence_fit(cps, np.sqrt(np.mean(errs**2, axis=0)))
    single = convergence_fit(cps, errs[0])
    ok = -0.6 <= slope <= -0.4
    detail = f"RMS over {n_chains} chains of 10^6: slope={slope:.3f}; seed-0 chain alone: {single:.3f}; reference={ref:.10f}"
    return ok, "running-mean convergence rate on J1", detail


# ------------------------------------------------------------ 4
def _barrier(post):
    a, b = post.modes
    return optimize.minimize_scalar(lambda u: -post.cost(u), bounds=(a, b), method="bounded", options={"xatol": 1e-10}).x


def criterion_4():
    bar = _barrier(J1)
    ch = rmap_chain(J1.problem(), 10000, seed=0)
    left = float(np.mean(ch.samples[:, 0] < bar))
    occ = (left, 1 - left)
    other = []
    for i, mode in enumerate(J1.modes):
        sn = sn_chain(J1.problem(), 100000, np.array([mode]), seed=i)
        inside_left = sn.samples[:, 0] < bar
        other.append(float(np.mean(~inside_left if i == 0 else inside_left)))
    ok = min(occ) >= 0.20 and max(other) < 0.01 and not ch.failures
    detail = f"rMAP occupancy left/right={occ[0]:.3f}/{occ[1]:.3f}; SN other-mode occupancy={other[0]:.4f}, {other[1]:.4f}"
    return ok, "mode coverage and SN mode-sticking on J1", detail


# ------------------------------------------------------------ 5
def criterion_5():
    n = 5000
    raw = rmap_chain(J2.problem(), n, seed=0, jacobian=True)
    met = metropolize_rmap(raw, "full")
    wgt = importance_weights(raw, "full")
    edges = np.linspace(-1, 2, 61)
    tv_raw = tv_distance(raw.samples[:, 0], J2.density, edges)
    tv_met = tv_distance(met.samples[:, 0], J2.density, edges)
    tv_w = tv_distance(wgt.samples[:, 0], J2.density, edges, wgt.weights)
    # spurious mode: the region left of the saddle of the randomized cost, where J2 carries little mass
    cut = 0.3
    exact = J2.mass(-np.inf, cut)
    occ = float(np.mean(raw.samples[:, 0] < cut))
    p = max(occ, exact)
    sigma = np.sqrt(p * (1 - p) / len(raw))
    margin = (occ - exact) / sigma
    ok = tv_met < tv_raw and tv_w < tv_raw and margin > 3
    detail = (f"TV plain={tv_raw:.4f}, metropolized={tv_met:.4f}, weighted={tv_w:.4f}; "
              f"u<{cut}: plain {occ:.4f} vs exact {exact:.5f} ({margin:.1f} sigma)")
    return ok, "metropolization de-biasing on J2", detail


# ------------------------------------------------------------ 6
def criterion_6():
    case = make_synthetic_case(nx=16, alpha=8.0, seed=0)
    p = case.problem
    rng = np.random.default_rng(6)
    u = case.truth + 0.05 * rng.standard_normal(p.n_params)
    v = rng.standard_normal(p.n_params)
    v /= p.norm(v)
    steps = 10.0 ** -np.arange(3, 8)
    g = p.gradient(u)
    dg = p.inner(g, v)
    grad_err = min(abs((p.objective(u + h * v) - p.objective(u - h * v)) / (2 * h) - dg) / abs(dg) for h in steps)
    Hv = p.hessian_action(u, v)
    hess_err = min(p.norm((p.gradient(u + h * v) - p.gradient(u - h * v)) / (2 * h) - Hv) / p.norm(Hv) for h in steps)
    # zero residual: data equal G(u) and the prior is centred at u
    z = InverseProblem(p.model.clone(), p.prior.with_mean(u), p.forward(u), p.noise_sigma)
    gn = z.gn_hessian_action(u, v)
    gap = z.norm(z.hessian_action(u, v) - gn) / z.norm(gn)
    w = rng.standard_normal(p.n_obs)
    st = p.state(u)
    lhs = float(p.model.jacobian_action(st, v) @ w)
    rhs = float(v @ p.model.jacobian_transpose_action(st, w))
    dot = abs(lhs - rhs) / abs(lhs)
    ok = grad_err < 1e-5 and hess_err < 1e-4 and gap < 1e-4 and dot < 1e-8
    detail = f"N={p.n_params}: gradient {grad_err:.1e}, Hessian {hess_err:.1e}, GN-full gap {gap:.1e}, transpose {dot:.1e}"
    return ok, "adjoint and Hessian correctness on 16x16 Helmholtz", detail


# ------------------------------------------------------------ 7
def criterion_7(n_rmap=100, n_dram=40000, n_cost=100):
    case = make_synthetic_case(nx=9, alpha=8.0, seed=0)
    p = case.problem
    u_map, _ = map_point(p.clone())
    warm = rmap_chain(p, n_rmap, start_strategy="warm", seed=0, map_point_value=u_map)
    tau_rmap = float(iact_per_component(warm.samples).mean())
    # adaptation runs over the first quarter of the chain and is frozen afterwards
    dram = dram_problem_chain(p.clone(), n_dram, start=u_map, adapt_cfg=DRAMConfig(burn_in=n_dram // 4), seed=0)
    tau_dram = float(iact_per_component(dram.samples[dram.info["burn_in"]:]).mean())
    tr = rmap_chain(p, n_cost, start_strategy="random", seed=0, optimizer="trincg")
    lm = rmap_chain(p, n_cost, start_strategy="random", seed=0, optimizer="lm")
    it_warm = float(np.mean(warm.meta["iterations"]))
    it_rand = float(np.mean(tr.meta["iterations"]))
    ok = (tau_rmap < 1.5 and tau_dram > 50 and tr.counters["total"] < lm.counters["total"] and it_warm < it_rand)
    detail = (f"N={p.n_params}: tau rMAP={tau_rmap:.2f} (n={len(warm)}), tau DRAM={tau_dram:.0f} (n={n_dram}); "
              f"solves TRINCG={tr.counters['total']} vs LM={lm.counters['total']} ({n_cost} samples, failed "
              f"{len(tr.failures)}/{len(lm.failures)}); iterations warm={it_warm:.1f} vs random={it_rand:.1f}")
    return ok, "sampler efficiency direction on Helmholtz", detail


# ------------------------------------------------------------ 8
def _files(manifest, root):
    import os

    d = os.path.join(root, manifest["directory"])
    out = {}
    for name in sorted(manifest["files"]) + [f"manifest_{manifest['config_hash']}_s{manifest['seed']}.json"]:
        with open(os.path.join(d, name), "rb") as fh:
            out[name] = fh.read()
    return out


def criterion_8():
    import tempfile

    cfgs = [
        {"name": "det-j1", "problem": {"type": "analytical", "kind": "J1"},
         "sampler": {"method": "rmap", "n": 200, "metropolize": "simplified", "weighted": True}},
        {"name": "det-hz", "problem": {"type": "helmholtz", "mesh": {"nx": 6, "ny": 6}},
         "sampler": {"method": "rmap", "n": 6, "block_size": 3,
                     "combinations": [{"optimizer": "trincg", "start": "warm"}, {"optimizer": "lm", "start": "random"}]}},
        {"name": "det-dram", "problem": {"type": "analytical", "kind": "J2"},
         "sampler": {"method": "dram", "n": 2000, "burn_in": 200, "start": "prior-mean"}},
    ]
    same, n_files = True, 0
    for raw in cfgs:
        cfg = validate(raw)
        with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
            fa = _files(run_experiment(cfg, a, seed=4), a)
            fb = _files(run_experiment(cfg, b, seed=4, workers=2), b)
            same = same and fa == fb
            n_files += len(fa)
    return same, "determinism of reruns", f"{len(cfgs)} configs, {n_files} files bitwise identical (serial vs 2 workers)"


# ------------------------------------------------------------ 9
def _offset_gap(problem, u, n, seed):
    """Monte Carlo mean and standard error of J^r(u) - J(u)."""
    z = CounterStream(seed, problem.randomization_width).normals_block(0, n)
    base = problem.objective(u)
    vals = np.array([problem.randomized_objective(u, problem.randomization_from_normals(zi)) - base for zi in z])
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)


def _offset_cases():
    lin, _ = make_linear_problem(n_params=10, n_obs=6, noise_sigma=0.5, seed=0)
    return [("J1", J1.problem(), np.array([0.9])), ("J2", J2.problem(), np.array([0.95])),
            ("linear", lin, np.linspace(-1, 1, 10))]


@functools.lru_cache(maxsize=None)
def offset_results(n=200000):
    out = []
    for name, p, u in _offset_cases():
        mean, se = _offset_gap(p, u, n, seed=9)
        literal = p.observations.size * p.noise_sigma**2 + float(np.trace(p.prior.covariance_matrix()))
        corrected = 0.5 * (p.n_obs + p.prior.rank)
        out.append((name, mean, se, literal, corrected))
    return out


def criterion_9():
    res = offset_results()
    literal_ok = all(abs(m - lit) < 3 * se for _, m, se, lit, _ in res)
    corrected_ok = all(abs(m - cor) < 3 * se for _, m, se, _, cor in res)
    parts = "; ".join(f"{nm}: {m:.4f}+-{se:.4f} vs literal {lit:.3f}, (K+N)/2={cor:.1f}" for nm, m, se, lit, cor in res)
    detail = f"{parts}; identity with (K+N)/2 {'holds' if corrected_ok else 'fails'}"
    return literal_ok, "perturbed-minus-plain objective constant", detail


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def _run(k, acceptance=None):
    passed, title, detail, secs = _timed(CRITERIA[k])
    line = _line(k, passed, title, detail, secs)
    if acceptance is not None:
        acceptance[k] = line
    print(line)
    return passed, line


# ------------------------------------------------------------ pytest entry points
@pytest.mark.parametrize("k", [1, 2, 4, 5, 6, 8])
def test_criterion(k, acceptance):
    passed, line = _run(k, acceptance)
    assert passed, line


@pytest.mark.slow
def test_criterion_3(acceptance):
    passed, line = _run(3, acceptance)
    assert passed, line


@pytest.mark.slow
def test_criterion_7(acceptance):
    passed, line = _run(7, acceptance)
    assert passed, line


@pytest.mark.xfail(strict=True, reason="the sum of squared perturbation norms is not the constant; see the corrected test")
def test_criterion_9_literal(acceptance):
    passed, line = _run(9, acceptance)
    assert passed, line


def test_offset_constant_corrected():
    # J^r(u) - J(u) averages to 1/2 E|theta|^2_Lambda^-1 + 1/2 E|eps|^2_C^-1 = (K + N) / 2
    for name, mean, se, _, corrected in offset_results():
        assert abs(mean - corrected) < 3 * se, name


def test_offset_constant_scalar_closed_form():
    # unit noise and unit prior variance: literal and corrected constants differ by a factor of two
    prior = GaussianMeasure.from_covariance([0.0], [[1.0]])
    from rmap.problem import linear_model

    p = InverseProblem(linear_model(np.eye(1)), prior, [0.0], 1.0)
    mean, se = _offset_gap(p, np.array([0.5]), 200000, seed=2)
    assert abs(mean - 1.0) < 3 * se
    assert abs(mean - 2.0) > 10 * se


if __name__ == "__main__":
    ks = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = [_run(k)[0] for k in ks]
    sys.exit(0 if all(results) or ks == [9] else 1)
