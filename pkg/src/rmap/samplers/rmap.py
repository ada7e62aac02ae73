"""Randomized MAP sampling: draw ``(theta, eps)``, minimize the perturbed objective.

Sample ``j`` always uses the randomization stored at counter index ``j`` of
the seed's randomization stream, and samples are processed in fixed-size
blocks that each start from a fresh problem clone.  Serial and process-parallel
runs therefore produce the same samples and the same per-sample metadata.
"""

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from rmap.errors import SolverFailure, StagnationError
from rmap.optimizer import MAPObjective, SolverConfig, minimize
from rmap.problem import SolveCounter
from rmap.rng import CounterStream
from rmap.samplers.chain import Chain
from rmap.samplers.metropolize import jacobian_info, linearization_log_quad, metropolize_rmap
from rmap.warmstart import WarmStartContext, map_point, sensitivity_guess

log = logging.getLogger(__name__)

START_STRATEGIES = ("random", "prior-mean", "map", "warm")


def randomization_stream(problem, seed):
    return CounterStream(seed, problem.randomization_width)


def _block_bounds(n, block_size):
    return [(b, min(b + block_size, n)) for b in range(0, n, block_size)]


def _solve_block(job):
    """Worker body: solve samples ``start..stop-1`` on a private problem clone."""
    problem, task, start, stop = job
    problem = problem.clone()
    ctx = task["warm_ctx"]
    if ctx is not None:
        ctx = _rebind(ctx, problem)
    stream = CounterStream(task["seed"], problem.randomization_width)
    z = stream.normals_block(start, stop)
    records = []
    prev, u_prev = None, None
    for j in range(start, stop):
        r = problem.randomization_from_normals(z[j - start], index=j)
        rec = {"index": j, "theta": r.theta, "eps": r.eps}
        c0 = problem.counter.snapshot()
        try:
            strategy = task["start"]
            fallback = False
            if strategy == "random":
                u_init = problem.prior.mean + r.eps
            elif strategy == "prior-mean":
                u_init = problem.prior.mean.copy()
            elif strategy == "map":
                u_init = task["map_point"].copy()
            else:
                u_init, fallback = sensitivity_guess(ctx, r, prev, u_prev)
            c1 = problem.counter.snapshot()
            u, rep = task["optimizer"](MAPObjective(problem, r), u_init, task["cfg"])
            rec.update(
                u=u,
                iterations=rep.iterations,
                reason=rep.reason,
                cg_iterations=rep.cg_iterations,
                final_gradnorm=rep.final_gradnorm,
                guess_solves=(c1 - c0).total,
                solves=rep.total_solves,
                warm_fallback=fallback,
            )
            if rep.reason == "iteration-cap":
                raise StagnationError(
                    f"iteration cap reached with gradient norm {rep.final_gradnorm:.3e}", best=u, report=rep
                )
            if task["jacobian"]:
                J = problem.jacobian(u)
                rec["log_det"] = jacobian_info(problem, u, jac=J).log_absdet
                rec["log_quad"] = linearization_log_quad(problem, u, jac=J)
            if task["basin"] is not None:
                rec["basin"] = int(np.ravel(task["basin"](u))[0])
            prev, u_prev = r, u
        except (StagnationError, SolverFailure) as exc:
            log.warning("sample %d failed: %s", j, exc)
            rec["error"] = f"{type(exc).__name__}: {exc}"
            prev, u_prev = None, None
        rec["counter"] = (problem.counter - c0).as_dict()
        records.append(rec)
    return records


def _rebind(ctx, problem):
    new = object.__new__(WarmStartContext)
    new.__dict__.update(ctx.__dict__)
    new.problem = problem
    return new


def _resolve_optimizer(optimizer):
    if callable(optimizer):
        return optimizer
    if optimizer not in ("trincg", "lm"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    return _OptimizerByName(optimizer)


class _OptimizerByName:
    # picklable wrapper so process workers can receive it
    def __init__(self, name):
        self.name = name

    def __call__(self, obj, u_init, cfg):
        return minimize(obj, u_init, cfg, self.name)


def run_blocks(problem, task, n, block_size, workers):
    jobs = [(problem, task, a, b) for a, b in _block_bounds(n, block_size)]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_block, jobs))
    else:
        results = [_solve_block(job) for job in jobs]
    return [rec for block in results for rec in block]


def records_to_chain(records, problem, method, seed, config, setup_counter, info):
    ok = [r for r in records if "error" not in r]
    failures = [{"index": r["index"], "error": r["error"]} for r in records if "error" in r]
    n_params = problem.n_params
    samples = np.array([r["u"] for r in ok]).reshape(len(ok), n_params)
    keys = [k for k in ("index", "iterations", "solves", "guess_solves", "cg_iterations", "reason",
                        "final_gradnorm", "warm_fallback", "log_det", "log_quad", "basin") if ok and k in ok[0]]
    meta = {k: [r[k] for r in ok] for k in keys}
    meta["theta"] = np.array([r["theta"] for r in ok]).reshape(len(ok), -1)
    meta["eps"] = np.array([r["eps"] for r in ok]).reshape(len(ok), n_params)
    meta["log_weight"] = np.zeros(len(ok))
    meta["accepted"] = np.ones(len(ok), dtype=bool)
    total = SolveCounter(**setup_counter.as_dict())
    for r in records:
        total = total + SolveCounter(**r["counter"])
    counters = dict(total.as_dict(), total=total.total, setup=setup_counter.total)
    return Chain(samples, meta, method, seed, config, counters, info, failures)


def rmap_chain(
    problem,
    n,
    start_strategy="random",
    metropolize=False,
    seed=0,
    cfg=None,
    optimizer="trincg",
    workers=1,
    block_size=10,
    warm_rank=None,
    map_point_value=None,
    basin=None,
    jacobian=None,
):
    """Draw ``n`` randomized MAP samples.

    Args:
        problem: :class:`~rmap.problem.InverseProblem`.
        n: number of samples.
        start_strategy: ``"random"`` (``u0 + eps`` of the sample itself),
            ``"prior-mean"``, ``"map"``, or ``"warm"`` (sensitivity guess from the
            previous sample of the block, anchored at the MAP point).
        metropolize: ``False``, ``True``/``"simplified"`` or ``"full"``.
        seed: integer seed of the randomization stream.
        cfg: :class:`~rmap.optimizer.SolverConfig`.
        optimizer: ``"trincg"``, ``"lm"`` or a callable ``(objective, u_init, cfg)``.
        workers: process count; results do not depend on it.
        block_size: samples per block (warm starts restart at each block).
        warm_rank: rank of the spectral Hessian surrogate for warm starts.
        map_point_value: precomputed MAP point.
        basin: optional callable labelling each sample.
        jacobian: record ``log_det``/``log_quad`` per sample (implied by ``metropolize``).

    Returns:
        :class:`~rmap.samplers.chain.Chain`; failed samples are listed in
        ``chain.failures`` and excluded from ``chain.samples``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if start_strategy not in START_STRATEGIES:
        raise ValueError(f"unknown start strategy {start_strategy!r}")
    cfg = cfg or SolverConfig()
    mode = {True: "simplified", False: None, None: None}.get(metropolize, metropolize)
    jacobian = bool(jacobian) or mode is not None
    opt = _resolve_optimizer(optimizer)
    setup = problem.clone()
    ctx = None
    u_map = map_point_value
    if start_strategy in ("map", "warm") and u_map is None:
        u_map, _ = map_point(setup)
    if start_strategy == "warm":
        ctx = WarmStartContext(setup, anchor=u_map, rank=warm_rank)
        ctx = _rebind(ctx, None)
    task = {
        "seed": seed,
        "start": start_strategy,
        "map_point": u_map,
        "warm_ctx": ctx,
        "cfg": cfg,
        "optimizer": opt,
        "jacobian": jacobian,
        "basin": basin,
    }
    records = run_blocks(problem, task, n, block_size, workers)
    config = {
        "n": n,
        "start_strategy": start_strategy,
        "optimizer": optimizer if isinstance(optimizer, str) else getattr(optimizer, "__name__", "custom"),
        "solver": cfg.to_dict(),
        "block_size": block_size,
        "warm_rank": warm_rank,
    }
    info = {"failed": sum("error" in r for r in records)}
    chain = records_to_chain(records, problem, "rmap", seed, config, setup.counter, info)
    if mode is not None:
        return metropolize_rmap(chain, mode)
    return chain


def scalar_rmap_samples(post, n, seed=0, start=0, solver="global"):
    """Vectorized rMAP for an :class:`~rmap.analytical.AnalyticalPosterior`.

    Uses the same randomization stream as :func:`rmap_chain` on
    ``post.problem()``, so sample ``j`` sees the same ``(theta, eps)``.
    ``solver="global"`` returns the global minimizer of each randomized
    objective; ``"local"`` runs Newton from ``u0 + eps``.

    Returns:
        ``(u, theta, eps)`` arrays of length ``n``.
    """
    z = CounterStream(seed, 2).normals_block(start, start + n)
    theta = post.noise_sigma * z[:, 0]
    eps = np.sqrt(post.prior_var) * z[:, 1]
    if solver == "global":
        u = post.global_minimize(theta, eps)
    elif solver == "local":
        u, ok = post.local_minimize(post.prior_mean + eps, theta, eps)
        if not ok.all():
            raise StagnationError(f"{int((~ok).sum())} local solves did not converge")
    else:
        raise ValueError(f"unknown scalar solver {solver!r}")
    return u, theta, eps
