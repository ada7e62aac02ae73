"""Experiment driver: build the problem from a config, run samplers, write outputs.

Output layout for a run with config hash ``H`` and seed ``S``::

    <out>/<name>_H_sS/
        config_H_sS.yaml
        manifest_H_sS.json
        <label>_H_sS.json / .csv      chain files
        <label>-stats_H_sS.json
        <label>-hist_H_sS.csv         (scalar problems)
        costs_H_sS.csv                (one row per optimizer/start combination)
        case_H_sS/                    (Helmholtz synthetic-case bundle)

The manifest lists every file with its SHA-256 and contains no timestamps, so
two runs of the same config and seed produce identical manifests.
"""

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

import rmap
from rmap.analytical import get_posterior
from rmap.config import config_hash
from rmap.diagnostics import chain_stats, moments, tv_distance, weighted_ess, write_histogram_csv, write_stats_json
from rmap.errors import SolverFailure, StagnationError, UndefinedIACTError
from rmap.helmholtz import make_synthetic_case, observation_grid, write_case
from rmap.optimizer import SolverConfig
from rmap.problem import linear_posterior, make_linear_problem
from rmap.samplers import importance_weights, metropolize_rmap, rmap_chain
from rmap.samplers.chain import Chain
from rmap.samplers.dram import DRAMConfig, dram_chain, dram_problem_chain
from rmap.samplers.rto import rto_chain, rto_importance_weights
from rmap.samplers.sn import sn_chain
from rmap.warmstart import map_point

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "rmap-manifest"
OUTPUT_ENV = "RMAP_OUTPUT_ROOT"


class ExperimentFailure(RuntimeError):
    """A solver failure aborted the run; partial outputs and the manifest were written."""

    def __init__(self, message, manifest_path=None):
        super().__init__(message)
        self.manifest_path = manifest_path


class OutputExistsError(FileExistsError):
    """Refusing to overwrite existing outputs without ``force``."""


@dataclass
class Setup:
    problem: object
    posterior: object = None
    case: object = None
    reference: dict = field(default_factory=dict)


def default_output_root():
    return os.environ.get(OUTPUT_ENV, os.path.join(os.getcwd(), "rmap-runs"))


def build_problem(pcfg):
    kind = pcfg["type"]
    if kind == "analytical":
        post = get_posterior(pcfg["kind"])
        return Setup(post.problem(), posterior=post)
    if kind == "linear":
        problem, B = make_linear_problem(
            pcfg["n_params"], pcfg["n_obs"], pcfg["noise_sigma"], pcfg["prior_var"], pcfg["matrix_seed"]
        )
        mean, cov = linear_posterior(problem, B)
        return Setup(problem, reference={"mean": mean, "cov": cov})
    obs = pcfg["observations"]
    case = make_synthetic_case(
        nx=pcfg["mesh"]["nx"],
        ny=pcfg["mesh"].get("ny", pcfg["mesh"]["nx"]),
        alpha=pcfg["alpha"],
        noise_pct=pcfg["noise_pct"],
        seed=pcfg["data_seed"],
        u0=pcfg["u0"],
        s=pcfg["s"],
        obs_points=observation_grid(obs["grid"], obs["lo"], obs["hi"]),
        noise_mode=pcfg["noise_mode"],
        source_tag=pcfg["source"]["tag"],
        flux=pcfg["source"]["flux"],
    )
    return Setup(case.problem, case=case)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class _Run:
    """Bookkeeping for one experiment directory."""

    def __init__(self, cfg, out_root, force):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.seed = cfg["seed"]
        self.tag = f"{self.hash}_s{self.seed}"
        self.dir = os.path.join(out_root, f"{cfg['name']}_{self.tag}")
        self.files = []
        self.chains = {}
        self.manifest_path = self.path("manifest", ".json")
        if os.path.exists(self.manifest_path) and not force:
            raise OutputExistsError(f"{self.dir} already holds a run; pass --force to overwrite")
        os.makedirs(self.dir, exist_ok=True)

    def path(self, label, ext):
        return os.path.join(self.dir, f"{label}_{self.tag}{ext}")

    def add(self, *paths):
        self.files.extend(paths)

    def save_chain(self, label, chain):
        chain.info["config_hash"] = self.hash
        chain.info["problem"] = self.cfg["problem"]
        prefix = self.path(label, "")
        self.add(*chain.save(prefix, force=True))
        self.chains[label] = chain
        return prefix

    def write_manifest(self, status, error=None, extra=None):
        files = {}
        for p in self.files:
            rel = os.path.relpath(p, self.dir)
            if os.path.isdir(p):
                for name in sorted(os.listdir(p)):
                    files[os.path.join(rel, name)] = _sha256(os.path.join(p, name))
            else:
                files[rel] = _sha256(p)
        doc = {
            "format": MANIFEST_FORMAT,
            "version": 1,
            "name": self.cfg["name"],
            "config_hash": self.hash,
            "seed": self.seed,
            "code_version": rmap.__version__,
            "status": status,
            "error": error,
            "files": files,
            "counters": {k: c.counters for k, c in self.chains.items()},
            "failures": {k: len(c.failures) for k, c in self.chains.items()},
        }
        doc.update(extra or {})
        with open(self.manifest_path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        return doc


def _solver_cfg(smp):
    return SolverConfig(**smp["solver"])


def _stats(chain, weighted=False):
    doc = {"n": len(chain), "method": chain.method, "failed": len(chain.failures)}
    w = chain.weights if weighted else None
    mean, var = moments(chain, w) if len(chain) else (np.array([]), np.array([]))
    doc.update(mean=mean.tolist(), variance=var.tolist())
    try:
        st = chain_stats(chain)
        doc.update(iact=st.iact, mean_iact=st.mean_iact, ess=st.ess, iact_rule=st.iact_rule)
    except (UndefinedIACTError, ValueError) as exc:
        doc.update(iact=None, mean_iact=None, ess=None, iact_note=str(exc))
    if weighted:
        doc["weighted_ess"] = weighted_ess(w)
    if "accepted" in chain.meta:
        doc["acceptance_rate"] = chain.acceptance_rate
    if "iterations" in chain.meta and len(chain):
        doc["mean_iterations"] = float(np.mean(chain.meta["iterations"]))
    doc["counters"] = chain.counters
    return doc


def _scalar_outputs(run, label, chain, setup, weighted):
    """Histogram vs exact density, TV-distance and mode occupancy for 1D problems."""
    post = setup.posterior
    hist = run.cfg["outputs"].get("histogram")
    if post is None or hist is None:
        return {}
    edges = np.linspace(hist["lo"], hist["hi"], hist["bins"] + 1)
    values = chain.samples[:, 0]
    w = chain.weights if weighted else None
    path = run.path(f"{label}-hist", ".csv")
    write_histogram_csv(path, edges, values, w)
    run.add(path)
    labels = np.array([post.basin(u) for u in values])
    wts = np.full(len(values), 1.0 / len(values)) if w is None else w
    modes = post.modes
    occupancy = {f"mode_{i}": float(wts[labels == i].sum()) for i in range(len(modes))}
    exact = {}
    if len(modes) == 2:
        split = 0.5 * (modes[0] + modes[1])
        left = post.mass(-np.inf, split)
        exact = {"mode_0": left, "mode_1": 1.0 - left}
    return {
        "tv_distance": float(tv_distance(values, post.density, edges, w)),
        "occupancy": occupancy,
        "exact_occupancy": exact,
        "modes": [float(m) for m in modes],
    }


def _density_curve(run, setup):
    post = setup.posterior
    hist = run.cfg["outputs"].get("histogram")
    if post is None or hist is None:
        return
    x = np.linspace(hist["lo"], hist["hi"], 401)
    path = run.path("density", ".csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["u", "density"])
        for xi, di in zip(x, post.density(x)):
            wr.writerow([repr(float(xi)), repr(float(di))])
    run.add(path)


def _start_point(smp, setup, problem):
    if "start_point" in smp:
        u = np.asarray(smp["start_point"], dtype=float)
        if u.size != problem.n_params:
            raise ValueError(f"start_point has {u.size} entries, expected {problem.n_params}")
        return u
    if smp["start"] in ("map", "warm"):
        return map_point(problem.clone())[0]
    if smp["start"] == "prior-mean":
        return problem.prior.mean.copy()
    raise ValueError("MCMC chains need start 'map', 'prior-mean' or an explicit start_point")


def _sample(smp, setup, seed, workers, optimizer, start, u_map):
    problem = setup.problem
    basin = setup.posterior.basin if setup.posterior is not None else None
    method = smp["method"]
    if method == "rmap":
        return rmap_chain(
            problem,
            smp["n"],
            start_strategy=start,
            seed=seed,
            cfg=_solver_cfg(smp),
            optimizer=optimizer,
            workers=workers,
            block_size=smp["block_size"],
            warm_rank=smp["warm_rank"],
            map_point_value=u_map,
            basin=basin,
            jacobian=smp["metropolize"] != "none" or smp["weighted"],
        )
    if method == "rto":
        return rto_chain(
            problem, smp["n"], smp["rto_variant"], seed, _solver_cfg(smp), optimizer, u_map,
            "random" if start == "random" else "map",
        )
    start_u = _start_point(smp, setup, problem)
    if method == "sn":
        return sn_chain(problem, smp["n"], start_u, seed, basin)
    dcfg = DRAMConfig(burn_in=smp["burn_in"], adapt_interval=smp["adapt_interval"], dr_scale=smp["dr_scale"])
    if setup.posterior is not None:
        post = setup.posterior
        chain = dram_chain(lambda u: -post.cost(u[0]), smp["n"], start_u, dcfg, seed,
                           problem.prior.covariance_matrix())
        chain.meta["basin"] = np.array([post.basin(u) for u in chain.samples[:, 0]])
        return chain
    return dram_problem_chain(problem, smp["n"], start_u, dcfg, seed)


def _cost_row(label, optimizer, start, counters, n_ok, n_failed, mean_iterations):
    c = counters
    return {
        "label": label,
        "optimizer": optimizer,
        "start": start,
        "samples": n_ok,
        "failed": n_failed,
        "mean_iterations": mean_iterations,
        "forward": c.get("forward", 0),
        "adjoint": c.get("adjoint", 0),
        "incremental_forward": c.get("incremental_forward", 0),
        "incremental_adjoint": c.get("incremental_adjoint", 0),
        "setup": c.get("setup", 0),
        "total": c.get("total", 0),
        "total_per_sample": c.get("total", 0) / max(n_ok, 1),
    }


def write_cost_table(path, rows):
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, keys, lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def run_experiment(cfg, out_root=None, seed=None, workers=1, force=False):
    """Run a validated config; returns the manifest dict.

    Raises:
        OutputExistsError: outputs exist and ``force`` is false.
        ExperimentFailure: a solve failed; outputs produced so far and a
            manifest with ``status: failed`` are on disk.
    """
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    run = _Run(cfg, out_root or default_output_root(), force)
    cfg_path = run.path("config", ".yaml")
    with open(cfg_path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)
    run.add(cfg_path)
    smp = cfg["sampler"]
    summary = {}
    try:
        setup = build_problem(cfg["problem"])
        if setup.case is not None and cfg["outputs"]["write_case"]:
            case_dir = os.path.join(run.dir, f"case_{run.tag}")
            write_case(setup.case, case_dir)
            run.add(case_dir)
        _density_curve(run, setup)
        combos = smp.get("combinations") or [{"optimizer": smp["optimizer"], "start": smp["start"]}]
        needs_map = smp["method"] == "rto" or any(c["start"] in ("map", "warm") for c in combos)
        rows = []
        u_map = None
        if needs_map and smp["method"] in ("rmap", "rto"):
            u_map, rep = map_point(setup.problem.clone())
            solves = dict(rep.solves, total=rep.total_solves)
            rows.append(_cost_row("map-point", "trincg", "prior-mean", solves, 1, 0, float(rep.iterations)))
        for combo in combos:
            label = smp["method"] if len(combos) == 1 else f"{smp['method']}-{combo['optimizer']}-{combo['start']}"
            chain = _sample(smp, setup, cfg["seed"], workers, combo["optimizer"], combo["start"], u_map)
            run.save_chain(label, chain)
            variants = [(label, chain, False)]
            if smp["method"] == "rmap" and smp["metropolize"] != "none":
                mchain = metropolize_rmap(chain, smp["metropolize"])
                run.save_chain(f"{label}-metropolized", mchain)
                variants.append((f"{label}-metropolized", mchain, False))
            if smp["weighted"]:
                if smp["method"] == "rmap":
                    mode = smp["metropolize"] if smp["metropolize"] != "none" else "simplified"
                    wchain = importance_weights(chain, mode)
                else:
                    wchain = rto_importance_weights(chain, setup.problem)
                run.save_chain(f"{label}-weighted", wchain)
                variants.append((f"{label}-weighted", wchain, True))
            for vlabel, vchain, weighted in variants:
                stats = _stats(vchain, weighted)
                stats.update(_scalar_outputs(run, vlabel, vchain, setup, weighted))
                if setup.reference:
                    ref_mean, ref_cov = setup.reference["mean"], setup.reference["cov"]
                    stats["reference_mean"] = ref_mean.tolist()
                    stats["mean_abs_error"] = np.abs(np.asarray(stats["mean"]) - ref_mean).tolist()
                    emp = np.cov(vchain.samples, rowvar=False) if len(vchain) > 1 else np.zeros_like(ref_cov)
                    stats["cov_rel_error_fro"] = float(np.linalg.norm(emp - ref_cov) / np.linalg.norm(ref_cov))
                stats["config_hash"], stats["seed"] = run.hash, run.seed
                path = run.path(f"{vlabel}-stats", ".json")
                write_stats_json(path, stats)
                run.add(path)
                summary[vlabel] = {k: stats[k] for k in ("n", "mean_iact", "tv_distance", "acceptance_rate") if k in stats}
            if smp["method"] in ("rmap", "rto"):
                its = float(np.mean(chain.meta["iterations"])) if len(chain) else float("nan")
                rows.append(_cost_row(label, combo["optimizer"], combo["start"], chain.counters, len(chain),
                                      len(chain.failures), its))
        if rows:
            path = run.path("costs", ".csv")
            write_cost_table(path, rows)
            run.add(path)
    except (SolverFailure, StagnationError) as exc:
        msg = f"{type(exc).__name__}: {exc}"
        log.error("run aborted: %s", msg)
        run.write_manifest("failed", msg, {"summary": summary})
        raise ExperimentFailure(msg, run.manifest_path) from exc
    return run.write_manifest("complete", None, {"summary": summary, "directory": os.path.basename(run.dir)})


# ------------------------------------------------------------ compare
def compare_chains(paths):
    """Side-by-side moments, IACT/ESS, TV-distances (scalar analytical chains) and costs.

    The first chain is the reference for pairwise discrepancies.  Each mean
    difference is reported both raw and as a z-score against the joint Monte
    Carlo standard error ``sqrt(var_a / ess_a + var_b / ess_b)``.
    """
    if len(paths) < 2:
        raise ValueError("compare needs at least two chain files")
    prefixes = []
    for p in map(str, paths):
        prefix = p[: -len(os.path.splitext(p)[1])] if p.endswith((".json", ".csv")) else p
        if prefix not in prefixes:
            prefixes.append(prefix)
    paths = prefixes
    if len(paths) < 2:
        raise ValueError("compare needs at least two distinct chains")
    chains = [Chain.load(p) for p in paths]
    dims = {c.dim for c in chains}
    if len(dims) != 1:
        raise ValueError(f"chains have incompatible parameter dimensions {sorted(dims)}")
    rows = []
    for p, c in zip(paths, chains):
        weighted = "+weighted" in c.method
        st = _stats(c, weighted)
        row = {
            "path": str(p),
            "method": c.method,
            "n": len(c),
            "mean": st["mean"],
            "variance": st["variance"],
            "mean_iact": st["mean_iact"],
            "ess": st["weighted_ess"] if weighted else st["ess"],
            "total_solves": c.counters.get("total"),
        }
        prob = c.info.get("problem") or {}
        if c.dim == 1 and prob.get("type") == "analytical":
            post = get_posterior(prob["kind"])
            lo, hi = post.modes[0] - 1.5, post.modes[-1] + 1.5
            edges = np.linspace(lo, hi, 61)
            row["tv_distance"] = float(tv_distance(c.samples[:, 0], post.density, edges, c.weights if weighted else None))
        rows.append(row)
    ref = rows[0]
    for row in rows:
        diff = np.asarray(row["mean"]) - np.asarray(ref["mean"])
        row["mean_diff_max"] = float(np.max(np.abs(diff)))
        if row["ess"] and ref["ess"]:
            se = np.sqrt(np.asarray(row["variance"]) / row["ess"] + np.asarray(ref["variance"]) / ref["ess"])
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(se > 0, np.abs(diff) / se, 0.0)
            row["mean_diff_max_z"] = float(np.max(z))
        else:
            row["mean_diff_max_z"] = None
        row["variance_rel_diff_max"] = float(
            np.max(np.abs(np.asarray(row["variance"]) - np.asarray(ref["variance"])) / np.maximum(np.abs(ref["variance"]), 1e-300))
        )
    return {"format": "rmap-compare", "reference": str(paths[0]), "chains": rows}


def format_report(report):
    lines = []
    head = f"{'chain':<40s} {'n':>7s} {'IACT':>8s} {'ESS':>9s} {'|dmean|':>9s} {'z':>6s} {'TV':>7s} {'solves':>9s}"
    lines.append(head)
    for r in report["chains"]:
        name = os.path.basename(r["path"])[:40]
        iact = f"{r['mean_iact']:.2f}" if r["mean_iact"] is not None else "-"
        ess = f"{r['ess']:.1f}" if r["ess"] is not None else "-"
        z = f"{r['mean_diff_max_z']:.2f}" if r["mean_diff_max_z"] is not None else "-"
        tv = f"{r['tv_distance']:.4f}" if "tv_distance" in r else "-"
        solves = str(r["total_solves"]) if r["total_solves"] is not None else "-"
        lines.append(f"{name:<40s} {r['n']:>7d} {iact:>8s} {ess:>9s} {r['mean_diff_max']:>9.2e} {z:>6s} {tv:>7s} {solves:>9s}")
    return "\n".join(lines)
