"""Sample containers and their on-disk format.

A chain is written as two files sharing a prefix:

``<prefix>.csv``
    header ``u0,u1,...``; one row per sample, floats in shortest round-trip form.
``<prefix>.json``
    ``{"format": "rmap-chain", "version": 1, "method", "seed", "config",
    "counters", "info", "meta": {column: [...]}, "failures": [...]}``.
    Per-sample metadata is stored column-wise; ``theta``/``eps`` hold the
    randomization of each sample when the method draws one.
"""

import csv
import json
import os

import numpy as np

CHAIN_FORMAT_VERSION = 1


class Chain:
    """Ordered samples with column-wise per-sample metadata.

    Attributes:
        samples: ``(n, N)`` array.
        meta: dict of length-``n`` columns (lists or arrays).  Common keys are
            ``index``, ``log_weight``, ``accepted``, ``iterations``, ``solves``,
            ``reason``, ``basin``, ``theta``, ``eps``, ``log_det``, ``log_quad``.
        failures: records of samples whose optimization failed; they are not
            part of ``samples``.
        info: chain-level scalars (acceptance rate, notes, ...).
    """

    def __init__(self, samples, meta=None, method="", seed=None, config=None, counters=None, info=None, failures=None):
        self.samples = np.asarray(samples, dtype=float)
        if self.samples.ndim == 1:
            self.samples = self.samples[:, None]
        self.meta = dict(meta or {})
        for k, v in self.meta.items():
            if len(v) != len(self.samples):
                raise ValueError(f"metadata column {k!r} has length {len(v)}, expected {len(self.samples)}")
        self.method = method
        self.seed = seed
        self.config = config or {}
        self.counters = counters or {}
        self.info = info or {}
        self.failures = list(failures or [])

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def log_weights(self):
        lw = self.meta.get("log_weight")
        return np.zeros(len(self)) if lw is None else np.asarray(lw, dtype=float)

    @property
    def weights(self):
        """Importance weights normalized to sum to one."""
        lw = self.log_weights
        w = np.exp(lw - lw.max())
        return w / w.sum()

    @property
    def acceptance_rate(self):
        acc = self.meta.get("accepted")
        return 1.0 if acc is None else float(np.mean(acc))

    def column(self, key):
        return np.asarray(self.meta[key])

    def subset(self, idx):
        idx = np.asarray(idx)
        meta = {k: [v[i] for i in idx] if isinstance(v, list) else np.asarray(v)[idx] for k, v in self.meta.items()}
        return Chain(self.samples[idx], meta, self.method, self.seed, self.config, self.counters, self.info)

    def copy(self, **changes):
        kw = dict(
            samples=self.samples.copy(),
            meta={k: list(v) if isinstance(v, list) else np.array(v) for k, v in self.meta.items()},
            method=self.method,
            seed=self.seed,
            config=dict(self.config),
            counters=dict(self.counters),
            info=dict(self.info),
            failures=list(self.failures),
        )
        kw.update(changes)
        return Chain(**kw)

    # ------------------------------------------------------------ IO
    def to_json(self):
        return {
            "format": "rmap-chain",
            "version": CHAIN_FORMAT_VERSION,
            "method": self.method,
            "seed": self.seed,
            "n": len(self),
            "dim": self.dim,
            "config": self.config,
            "counters": self.counters,
            "info": self.info,
            "meta": {k: _jsonable(v) for k, v in self.meta.items()},
            "failures": _jsonable(self.failures),
        }

    def save(self, prefix, force=True):
        """Write ``prefix.json`` and ``prefix.csv``; returns the two paths."""
        paths = (f"{prefix}.json", f"{prefix}.csv")
        if not force:
            for p in paths:
                if os.path.exists(p):
                    raise FileExistsError(p)
        os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
        with open(paths[0], "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"u{i}" for i in range(self.dim)])
            for row in self.samples:
                w.writerow([repr(float(x)) for x in row])
        return paths

    @classmethod
    def load(cls, prefix):
        prefix = str(prefix)
        for ext in (".json", ".csv"):
            if prefix.endswith(ext):
                prefix = prefix[: -len(ext)]
        with open(f"{prefix}.json") as fh:
            doc = json.load(fh)
        if doc.get("format") != "rmap-chain":
            raise ValueError(f"{prefix}.json is not a chain file")
        if doc.get("version") != CHAIN_FORMAT_VERSION:
            raise ValueError(f"unsupported chain format version {doc.get('version')}")
        samples = np.loadtxt(f"{prefix}.csv", delimiter=",", skiprows=1, ndmin=2)
        if doc["n"] == 0:
            samples = np.empty((0, doc["dim"]))
        meta = {k: np.asarray(v) if _numeric(v) else v for k, v in doc["meta"].items()}
        return cls(samples, meta, doc["method"], doc["seed"], doc["config"], doc["counters"], doc["info"], doc["failures"])


def _numeric(v):
    try:
        arr = np.asarray(v)
    except ValueError:
        return False
    return arr.dtype.kind in "biuf"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return v.item()
    return v
