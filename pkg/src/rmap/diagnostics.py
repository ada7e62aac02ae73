"""Chain statistics: autocorrelation, IACT, ESS, moments, histograms, rate fits."""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from rmap.errors import UndefinedIACTError

IACT_RULE = "geyer-initial-positive-sequence, biased (1/n) ACF, floored at 1"


def acf(x):
    """Biased autocorrelation ``rho(k) = c(k) / c(0)`` with ``c(k) = 1/n sum (x_t - m)(x_{t+k} - m)``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(y, size)
    c = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if c[0] <= 0:
        raise UndefinedIACTError("constant series has no autocorrelation")
    return c / c[0]


def iact(series):
    """Integrated autocorrelation time ``1 + 2 sum_k rho(k)``.

    The sum is truncated by Geyer's initial positive sequence rule: pair sums
    ``rho(2m) + rho(2m+1)`` are accumulated while positive.  The result is
    floored at 1.

    Raises:
        UndefinedIACTError: series shorter than 10 or constant.
    """
    x = np.asarray(series, dtype=float)
    if x.size < 10:
        raise UndefinedIACTError("series must have at least 10 entries")
    if np.ptp(x) == 0:
        raise UndefinedIACTError("constant series has no autocorrelation")
    rho = acf(x)
    npairs = rho.size // 2
    pairs = rho[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs <= 0)
    m = neg[0] if neg.size else npairs
    tau = -1.0 + 2.0 * pairs[:m].sum()
    return max(1.0, float(tau))


def iact_per_component(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    return np.array([iact(samples[:, j]) for j in range(samples.shape[1])])


def _samples(chain):
    return chain.samples if hasattr(chain, "samples") else np.asarray(chain, dtype=float)


def ess(chain):
    """``n / mean IACT`` over components."""
    s = _samples(chain)
    if s.ndim == 1:
        s = s[:, None]
    return s.shape[0] / float(np.mean(iact_per_component(s)))


def weighted_ess(weights):
    """``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    return float(w.sum() ** 2 / np.sum(w**2))


def moments(chain, weights=None):
    """Componentwise mean and variance.

    Unweighted: sample mean and unbiased variance.  Weighted: self-normalized
    mean and the reliability-weighted unbiased variance
    ``sum w (x - m)^2 / (V1 - V2 / V1)`` with ``V1 = sum w``, ``V2 = sum w^2``;
    equal weights reproduce the unweighted result.
    """
    s = _samples(chain)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0]
    if n == 0:
        raise ValueError("empty chain")
    if weights is None:
        mean = s.mean(axis=0)
        var = s.var(axis=0, ddof=1) if n > 1 else np.zeros(s.shape[1])
        return mean, var
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be nonnegative, not all zero, one per sample")
    if np.all(w == w[0]):
        return moments(s)
    v1, v2 = w.sum(), np.sum(w**2)
    mean = w @ s / v1
    denom = v1 - v2 / v1
    var = w @ (s - mean) ** 2 / denom if denom > 0 else np.zeros(s.shape[1])
    return mean, var


@dataclass
class ChainStats:
    iact: list
    mean_iact: float
    ess: float
    mean: list
    variance: list
    n: int
    weighted_ess: float = None
    iact_rule: str = IACT_RULE

    def to_dict(self):
        return asdict(self)


def chain_stats(chain, burn_in=0, weighted=False):
    s = _samples(chain)[burn_in:]
    taus = iact_per_component(s)
    w = None
    if weighted:
        w = chain.weights[burn_in:]
    mean, var = moments(s, w)
    return ChainStats(
        iact=taus.tolist(),
        mean_iact=float(taus.mean()),
        ess=float(s.shape[0] / taus.mean()),
        mean=mean.tolist(),
        variance=var.tolist(),
        n=int(s.shape[0]),
        weighted_ess=weighted_ess(w) if w is not None else None,
    )


def convergence_fit(n, errors):
    """Least-squares slope of ``log(errors)`` against ``log(n)``."""
    n = np.asarray(n, dtype=float)
    e = np.asarray(errors, dtype=float)
    if np.any(e <= 0) or np.any(n <= 0):
        raise ValueError("sample counts and errors must be positive")
    if n.size < 2:
        raise ValueError("need at least two points")
    slope, _ = np.polyfit(np.log(n), np.log(e), 1)
    return float(slope)


def running_mean_errors(values, reference, checkpoints):
    """``|mean(values[:n]) - reference|`` at each checkpoint ``n``."""
    c = np.cumsum(np.asarray(values, dtype=float))
    idx = np.asarray(checkpoints, dtype=int)
    return np.abs(c[idx - 1] / idx - reference)


def log_checkpoints(n_min, n_max, per_decade=8):
    k = int(round(np.log10(n_max / n_min) * per_decade)) + 1
    return np.unique(np.round(np.logspace(np.log10(n_min), np.log10(n_max), k)).astype(int))


# ------------------------------------------------------------ histograms
def histogram(values, edges, weights=None):
    """Density histogram (integrates to 1 over the covered edges)."""
    values = np.asarray(values, dtype=float).ravel()
    counts, _ = np.histogram(values, bins=edges, weights=weights)
    width = np.diff(edges)
    total = counts.sum()
    return counts / (total * width) if total > 0 else counts.astype(float)


def tv_distance(values, density, edges, weights=None, fine=20):
    """Total variation distance between a histogram and a reference density.

    ``0.5 sum_bins |p_hist - p_ref|`` where ``p_ref`` is the reference mass of
    each bin (midpoint rule on ``fine`` sub-intervals) and mass outside the
    edges is compared as a single extra bin.
    """
    edges = np.asarray(edges, dtype=float)
    values = np.asarray(values, dtype=float).ravel()
    w = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)
    counts, _ = np.histogram(values, bins=edges, weights=w)
    p_hist = counts / w.sum()
    sub = np.linspace(0, 1, fine + 1)
    mids = edges[:-1, None] + np.diff(edges)[:, None] * (sub[:-1] + sub[1:])[None] / 2
    p_ref = density(mids).sum(axis=1) * np.diff(edges) / fine
    # everything beyond the edges is treated as one extra bin
    outside = abs(p_ref.sum() - p_hist.sum())
    return 0.5 * (np.abs(p_hist - p_ref).sum() + outside)


def write_histogram_csv(path, edges, values, weights=None):
    counts, _ = np.histogram(np.asarray(values).ravel(), bins=edges)
    wcounts = None
    if weights is not None:
        wcounts, _ = np.histogram(np.asarray(values).ravel(), bins=edges, weights=weights)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["left", "right", "count"] + (["weight"] if wcounts is not None else []))
        for i in range(len(edges) - 1):
            row = [repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])]
            if wcounts is not None:
                row.append(repr(float(wcounts[i])))
            w.writerow(row)


def write_stats_json(path, stats):
    with open(path, "w") as fh:
        json.dump(stats.to_dict() if hasattr(stats, "to_dict") else stats, fh, indent=1, sort_keys=True)
        fh.write("\n")
