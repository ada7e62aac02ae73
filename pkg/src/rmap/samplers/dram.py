"""Delayed-rejection adaptive Metropolis (DRAM) baseline.

Random-walk Metropolis whose proposal covariance is re-estimated from the
chain history every ``adapt_interval`` steps until ``burn_in``, with one
delayed-rejection stage using a shrunken covariance when the first proposal
is rejected.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from rmap.errors import SolverFailure
from rmap.rng import STREAM_MCMC, generator
from rmap.samplers.chain import Chain

log = logging.getLogger(__name__)


@dataclass
class DRAMConfig:
    """Adaptation settings.

    Attributes:
        burn_in: steps after which the covariance is frozen.
        adapt_interval: steps between covariance updates.
        scale: ``s_d`` multiplying the empirical covariance; default ``2.38^2 / N``.
        dr_scale: second-stage covariance factor.
        jitter: ridge added to adapted covariances.
        initial_cov: starting proposal covariance (default ``scale`` times the
            prior covariance).
    """

    burn_in: int = 1000
    adapt_interval: int = 100
    scale: float = None
    dr_scale: float = 0.01
    jitter: float = 1e-10
    initial_cov: np.ndarray = None

    def to_dict(self):
        d = asdict(self)
        d.pop("initial_cov")
        return d


def _chol_with_jitter(cov, jitter):
    eye = np.eye(cov.shape[0])
    scale = max(float(np.mean(np.diag(cov))), 1e-300)
    eps = 0.0
    for _ in range(30):
        try:
            return np.linalg.cholesky(cov + eps * scale * eye), eps
        except np.linalg.LinAlgError:
            eps = max(10 * eps, jitter)
            log.warning("proposal covariance not SPD; adding jitter %.1e", eps)
    raise np.linalg.LinAlgError("could not regularize proposal covariance")


def dram_chain(log_density, n, start, adapt_cfg=None, seed=0, prior_cov=None, counter=None):
    """DRAM chain targeting ``exp(log_density)``.

    Args:
        log_density: callable ``u -> log target`` (unnormalized).
        n: chain length (including burn-in).
        start: initial state.
        adapt_cfg: :class:`DRAMConfig`.
        seed: seed of the MCMC stream.
        prior_cov: covariance used for the initial proposal when
            ``adapt_cfg.initial_cov`` is unset.
        counter: optional solve counter reported in the chain metadata.
    """
    cfg = adapt_cfg or DRAMConfig()
    rng = generator(seed, STREAM_MCMC)
    x = np.array(start, dtype=float)
    N = x.size
    sd = cfg.scale if cfg.scale is not None else 2.38**2 / N
    if cfg.initial_cov is not None:
        cov = np.asarray(cfg.initial_cov, dtype=float)
    elif prior_cov is not None:
        cov = sd * np.asarray(prior_cov, dtype=float)
    else:
        cov = sd * np.eye(N)
    L, _ = _chol_with_jitter(cov, cfg.jitter)
    c0 = counter.snapshot() if counter is not None else None
    lx = log_density(x)
    if not np.isfinite(lx):
        raise ValueError("log density is not finite at the start")
    samples = np.empty((n, N))
    accepted = np.zeros(n, dtype=bool)
    stage2 = np.zeros(n, dtype=bool)
    mean = x.copy()
    scatter = np.zeros((N, N))
    count = 1
    for k in range(n):
        y1 = x + L @ rng.standard_normal(N)
        l1 = log_density(y1)
        a1 = min(1.0, np.exp(min(0.0, l1 - lx))) if np.isfinite(l1) else 0.0
        if rng.random() < a1:
            x, lx = y1, l1
            accepted[k] = True
        else:
            y2 = x + np.sqrt(cfg.dr_scale) * (L @ rng.standard_normal(N))
            l2 = log_density(y2)
            if np.isfinite(l2):
                a21 = min(1.0, np.exp(min(0.0, l1 - l2))) if np.isfinite(l1) else 0.0
                # first-stage proposal densities q1(y2 -> y1) / q1(x -> y1)
                r_num = np.linalg.solve(L, y1 - y2)
                r_den = np.linalg.solve(L, y1 - x)
                log_q = -0.5 * (r_num @ r_num - r_den @ r_den)
                num = l2 + log_q + np.log1p(-a21) if a21 < 1 else -np.inf
                den = lx + np.log1p(-a1) if a1 < 1 else -np.inf
                if np.isfinite(num) and np.log(rng.random()) < num - den:
                    x, lx = y2, l2
                    accepted[k] = True
                    stage2[k] = True
            else:
                rng.random()
        samples[k] = x
        # running mean/scatter for adaptation
        count += 1
        delta = x - mean
        mean = mean + delta / count
        scatter = scatter + np.outer(delta, x - mean)
        if k + 1 <= cfg.burn_in and (k + 1) % cfg.adapt_interval == 0:
            emp = scatter / (count - 1)
            L, _ = _chol_with_jitter(sd * (emp + cfg.jitter * np.eye(N)), cfg.jitter)
    meta = {"accepted": accepted, "delayed": stage2, "log_weight": np.zeros(n)}
    counters = {}
    if counter is not None:
        counters = (counter - c0).as_dict()
        counters["total"] = sum(counters.values())
    info = {
        "acceptance_rate": float(accepted.mean()),
        "burn_in": cfg.burn_in,
        "proposal_chol_diag_mean": float(np.mean(np.diag(L))),
    }
    return Chain(samples, meta, "dram", seed, cfg.to_dict(), counters, info)


def dram_problem_chain(problem, n, start=None, adapt_cfg=None, seed=0):
    """DRAM on the posterior ``exp(-J)`` of an inverse problem."""
    def logp(u):
        try:
            return -problem.objective(u)
        except SolverFailure:
            return -np.inf

    start = problem.prior.mean if start is None else start
    return dram_chain(logp, n, start, adapt_cfg, seed, problem.prior.covariance_matrix(), problem.counter)
