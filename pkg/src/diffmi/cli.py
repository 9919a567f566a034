"""Experiment orchestration: seeded pipelines, result files, tables and sweeps.

A run config is a JSON object::

    {"tasks": ["bivariate-1x1"], "methods": ["minde_c", "nwj"], "seeds": [0, 1],
     "n_train": 100000, "n_test": 10000, "sigma": [1.0],
     "train": {...}, "arch": {...}, "critic": {...}, "mc": {...},
     "output_dir": "runs/demo"}

Every key except ``tasks`` is optional.  Seeding: for each (task, seed) a
``SeedSequence(seed, spawn_key=(crc32(task_id),))`` is split into a data
stream, a training stream and an estimation stream; the training and
estimation streams are further keyed by the crc32 of the model group and the
method name, so any single cell can be reproduced on its own.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import estimators as est
from . import tasks as tk
from .score_models import CondScoreModel, JointScoreModel, ScoreArch, TrainConfig, train
from .sde import VpSchedule

log = logging.getLogger("diffmi")

OUTPUT_ROOT_ENV = "DIFFMI_OUTPUT_ROOT"
DESK_MAX_ITERATIONS = 50_000
DESK_MAX_DIM = 10

MINDE_METHODS = ("minde_c", "minde_c_sigma", "minde_j", "minde_j_sigma")
BASELINE_METHODS = ("mine", "dv", "nwj", "infonce", "ksg")
METHODS = MINDE_METHODS + BASELINE_METHODS

RESULT_FIELDS = ("task_id", "method", "seed", "sigma", "estimate", "stderr", "gt", "config_hash")
TIMING_FIELDS = ("task_id", "method", "seed", "sigma", "wall_time_s", "config_hash")


def method_group(method: str) -> str:
    """Methods sharing a trained model share a group."""
    if method.startswith("minde_c"):
        return "minde_c"
    if method.startswith("minde_j"):
        return "minde_j"
    return method


# -- config -----------------------------------------------------------------------------

@dataclass
class RunConfig:
    tasks: list[str]
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    seeds: list[int] = field(default_factory=lambda: [0])
    n_train: int = 100_000
    n_test: int = 10_000
    sigma: list[float] = field(default_factory=lambda: [1.0])
    train: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    ksg_k: int = 10
    output_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        catalogue = tk.default_catalogue()
        unknown = [t for t in self.tasks if t not in catalogue]
        if unknown:
            raise ValueError(f"unknown task(s): {unknown}")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s): {bad}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if not self.tasks or not self.methods or not self.seeds:
            raise ValueError("tasks, methods and seeds must be non-empty")
        if any(s <= 0 for s in self.sigma):
            raise ValueError("sigma values must be positive")
        # validate override keys early
        TrainConfig(**self.train)
        bl.CriticConfig(**self.critic)
        est.McConfig(**self.mc)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def effective(self) -> dict:
        """Config with every default filled in (what the hash is taken over)."""
        return {
            "tasks": list(self.tasks), "methods": list(self.methods), "seeds": list(self.seeds),
            "n_train": self.n_train, "n_test": self.n_test, "sigma": list(self.sigma),
            "train": TrainConfig(**self.train).to_dict(),
            "arch": {**_arch_defaults(), **self.arch},
            "critic": bl.CriticConfig(**self.critic).to_dict(),
            "mc": vars(est.McConfig(**self.mc)).copy(), "ksg_k": self.ksg_k,
        }


def _arch_defaults() -> dict:
    a = ScoreArch(1, 1)
    return {"width": a.width, "n_blocks": a.n_blocks, "time_embed": a.time_embed, "norm": a.norm}


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def apply_desk_scale(cfg: RunConfig) -> RunConfig:
    """Cap training length and drop tasks above the desk dimension limit."""
    cat = tk.default_catalogue()
    cfg.tasks = [t for t in cfg.tasks if cat[t].dim <= DESK_MAX_DIM]
    if not cfg.tasks:
        raise ValueError("desk scale leaves no tasks")
    cfg.train = dict(cfg.train)
    cfg.train["iterations"] = min(cfg.train.get("iterations", TrainConfig().iterations),
                                  DESK_MAX_ITERATIONS)
    cfg.critic = dict(cfg.critic)
    cfg.critic["max_iterations"] = min(cfg.critic.get("max_iterations",
                                                      bl.CriticConfig().max_iterations),
                                       DESK_MAX_ITERATIONS)
    return cfg


# -- seeding -------------------------------------------------------------------------

def _key(s: str) -> int:
    return zlib.crc32(s.encode())


def cell_streams(seed: int, task_id: str, group: str, method: str):
    """Independent (data, train, estimate) generators for one cell."""
    root = np.random.SeedSequence(int(seed), spawn_key=(_key(task_id),))
    data, train_ss, est_ss = root.spawn(3)
    train_ss = np.random.SeedSequence(train_ss.entropy,
                                      spawn_key=train_ss.spawn_key + (_key(group),))
    est_ss = np.random.SeedSequence(est_ss.entropy, spawn_key=est_ss.spawn_key + (_key(method),))
    return (np.random.default_rng(data), np.random.default_rng(train_ss),
            np.random.default_rng(est_ss))


# -- pipeline -----------------------------------------------------------------------------

def prepare_data(spec: tk.TaskSpec, n_train: int, n_test: int, rng: np.random.Generator):
    """Sample train and test sets and standardize both with train statistics."""
    x_tr, y_tr = tk.sample(spec, n_train, rng)
    x_te, y_te = tk.sample(spec, n_test, rng)
    sx, sy = tk.Standardizer.fit(x_tr), tk.Standardizer.fit(y_tr)
    return sx.transform(x_tr), sy.transform(y_tr), sx.transform(x_te), sy.transform(y_te)


def fit_minde(group: str, spec: tk.TaskSpec, x, y, train_cfg: dict, arch_cfg: dict,
              rng: np.random.Generator):
    arch = ScoreArch(spec.m, spec.n, **arch_cfg)
    seed = int(rng.integers(2 ** 31))
    cls = CondScoreModel if group == "minde_c" else JointScoreModel
    model = cls(arch, VpSchedule(), seed=seed)
    cfg = TrainConfig(**{**train_cfg, "seed": int(rng.integers(2 ** 31))})
    return train(model, x, y, cfg)


def cell_hash(cfg_eff: dict, spec: tk.TaskSpec, method: str, seed: int, sigma) -> str:
    group = method_group(method)
    part = {"task": spec.to_dict(), "method": method, "seed": seed, "sigma": sigma,
            "n_train": cfg_eff["n_train"], "n_test": cfg_eff["n_test"]}
    if group.startswith("minde"):
        part.update(train=cfg_eff["train"], arch=cfg_eff["arch"], mc=cfg_eff["mc"])
    elif group == "ksg":
        part.update(k=cfg_eff["ksg_k"])
    else:
        part.update(critic=cfg_eff["critic"])
    return config_hash(part)


def run_job(task_id: str, group: str, methods: list[str], seed: int, cfg_eff: dict):
    """Train once for ``group`` and evaluate each of its ``methods``.

    Returns ``(records, timings)`` as lists of dicts.
    """
    spec = tk.get_task(task_id)
    gt = tk.ground_truth(spec).mi
    data_rng, train_rng, _ = cell_streams(seed, task_id, group, group)
    x_tr, y_tr, x_te, y_te = prepare_data(spec, cfg_eff["n_train"], cfg_eff["n_test"], data_rng)
    t0 = time.perf_counter()
    model = None
    if group.startswith("minde"):
        model = fit_minde(group, spec, x_tr, y_tr, cfg_eff["train"], cfg_eff["arch"], train_rng)
    elif group != "ksg":
        crit = bl.CriticConfig(**{**cfg_eff["critic"], "seed": int(train_rng.integers(2 ** 31))})
        model = bl.train_critic(group, x_tr, y_tr, crit, rng=train_rng)
    fit_time = time.perf_counter() - t0
    records, timings = [], []
    for method in methods:
        sigmas = cfg_eff["sigma"] if method.endswith("_sigma") else [None]
        for sigma in sigmas:
            _, _, est_rng = cell_streams(seed, task_id, group, f"{method}:{sigma}")
            t1 = time.perf_counter()
            if group.startswith("minde"):
                res = est.estimate_mi(model, x_te, y_te, method, sigma=sigma,
                                      mc=est.McConfig(**cfg_eff["mc"]), rng=est_rng, seed=seed)
            elif group == "ksg":
                res = bl.ksg(x_te, y_te, cfg_eff["ksg_k"])
            else:
                res = bl.estimate(group, x_te, y_te, critic=model,
                                  batch_size=cfg_eff["critic"]["batch_size"])
            h = cell_hash(cfg_eff, spec, method, seed, sigma)
            records.append({"task_id": task_id, "method": method, "seed": seed,
                            "sigma": "" if sigma is None else sigma, "estimate": res.mean,
                            "stderr": res.stderr, "gt": gt, "config_hash": h})
            timings.append({"task_id": task_id, "method": method, "seed": seed,
                            "sigma": "" if sigma is None else sigma,
                            "wall_time_s": fit_time + time.perf_counter() - t1, "config_hash": h})
    return records, timings


# -- result files -----------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _sort_key(rec, task_order, method_order):
    sigma = rec["sigma"]
    return (task_order.get(rec["task_id"], 10 ** 6), method_order.get(rec["method"], 10 ** 6),
            int(rec["seed"]), float(sigma) if sigma not in ("", None) else -1.0)


def write_records(path: Path, records: list[dict], fields) -> None:
    """Canonically ordered CSV; written atomically by a single writer."""
    order = {t: i for i, t in enumerate(tk.default_catalogue())}
    morder = {m: i for i, m in enumerate(METHODS)}
    records = sorted(records, key=lambda r: _sort_key(r, order, morder))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in records:
        w.writerow([_fmt(r[f]) for f in fields])
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def read_records(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        for k in ("estimate", "stderr", "gt", "wall_time_s"):
            if k in r:
                r[k] = float(r[k])
        if r.get("sigma") not in ("", None):
            r["sigma"] = float(r["sigma"])
    return rows


def resolve_output(path) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def run(cfg: RunConfig, progress: bool = True) -> tuple[Path, int]:
    """Execute every missing cell of ``cfg``; returns ``(output dir, n_failures)``."""
    out = resolve_output(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    eff = cfg.effective()
    results_path, timing_path = out / "results.csv", out / "timings.csv"
    records = read_records(results_path)
    timings = read_records(timing_path)
    done = {r["config_hash"] for r in records}
    cat = tk.default_catalogue()

    jobs = []
    for task_id in cfg.tasks:
        groups: dict[str, list[str]] = {}
        for m in cfg.methods:
            groups.setdefault(method_group(m), []).append(m)
        for group, methods in groups.items():
            for seed in cfg.seeds:
                hashes = [cell_hash(eff, cat[task_id], m, seed, s) for m in methods
                          for s in (eff["sigma"] if m.endswith("_sigma") else [None])]
                if all(h in done for h in hashes):
                    continue
                jobs.append((task_id, group, methods, seed))
    failures = []

    def collect(job, result):
        recs, tims = result
        new = [r for r in recs if r["config_hash"] not in done]
        records.extend(new)
        timings.extend(t for t in tims if t["config_hash"] not in done)
        done.update(r["config_hash"] for r in new)
        write_records(results_path, records, RESULT_FIELDS)
        write_records(timing_path, timings, TIMING_FIELDS)
        if progress:
            for r in new:
                log.info("%s %s seed=%s sigma=%s -> %.4f (GT %.4f)", r["task_id"], r["method"],
                         r["seed"], r["sigma"], r["estimate"], r["gt"])

    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            futures = [(job, pool.submit(run_job, *job, eff)) for job in jobs]
            for job, fut in futures:
                try:
                    collect(job, fut.result())
                except Exception as err:  # noqa: BLE001 - record and continue
                    failures.append({"job": list(job[:2]) + [job[3]], "error": repr(err)})
    else:
        for job in jobs:
            try:
                collect(job, run_job(*job, eff))
            except Exception as err:  # noqa: BLE001 - record and continue
                log.error("cell %s failed: %r", job, err)
                failures.append({"job": [job[0], job[1], job[3]], "error": repr(err)})
    if not results_path.exists():
        write_records(results_path, records, RESULT_FIELDS)
    summary = {"config_hash": config_hash(eff), "config": eff, "n_records": len(records),
               "n_jobs_run": len(jobs), "failures": failures,
               "null_context": "zeros after standardization"}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out, len(failures)


# -- rendering ---------------------------------------------------------------------------------

def quantize(v: float) -> float:
    """Round to 0.1 nats (half away from zero, robust to binary representation)."""
    return float(np.sign(v) * np.floor(abs(v) * 10 + 0.5 + 1e-9) / 10) + 0.0


def bias_marker(mean: float, gt: float) -> str:
    q, g = quantize(mean), quantize(gt)
    if q < g:
        return "(−)"
    if q > g:
        return "(+)"
    return ""


def render_cell(mean: float, gt: float) -> str:
    marker = bias_marker(mean, gt)
    return f"{quantize(mean):.1f}" + (f" {marker}" if marker else "")


def aggregate(records: list[dict]) -> list[dict]:
    """Mean over seeds per (method row, task)."""
    cells: dict[tuple, list] = {}
    for r in records:
        row = r["method"] if r["sigma"] in ("", None) else f"{r['method']}(s={r['sigma']:g})"
        cells.setdefault((row, r["task_id"]), []).append(r)
    out = []
    for (row, task), rs in cells.items():
        vals = np.array([r["estimate"] for r in rs])
        out.append({"row": row, "task_id": task, "mean": float(vals.mean()), "n_seeds": len(rs),
                    "gt": rs[0]["gt"]})
    return out


def render_table(results_dir) -> tuple[str, str]:
    """Plain-text table (methods x tasks) and its CSV twin."""
    results_dir = Path(results_dir)
    records = read_records(results_dir / "results.csv")
    if not records:
        raise ValueError(f"no records in {results_dir}")
    agg = aggregate(records)
    cat = list(tk.default_catalogue())
    tasks = [t for t in cat if any(a["task_id"] == t for a in agg)]
    morder = {m: i for i, m in enumerate(METHODS)}
    rows = sorted({a["row"] for a in agg}, key=lambda r: (morder.get(r.split("(")[0], 99), r))
    by = {(a["row"], a["task_id"]): a for a in agg}
    gts = {a["task_id"]: a["gt"] for a in agg}
    header = ["method"] + tasks
    lines = [["GT"] + [f"{quantize(gts[t]):.1f}" for t in tasks]]
    for row in rows:
        lines.append([row] + [render_cell(by[(row, t)]["mean"], gts[t]) if (row, t) in by else "-"
                              for t in tasks])
    widths = [max(len(str(c[i])) for c in [header] + lines) for i in range(len(header))]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    text = "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(l) for l in lines]) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "task_id", "mean", "quantized", "gt", "marker", "n_seeds"])
    for row in rows:
        for t in tasks:
            if (row, t) in by:
                a = by[(row, t)]
                w.writerow([row, t, repr(a["mean"]), f"{quantize(a['mean']):.1f}", repr(a["gt"]),
                            {"(−)": "-", "(+)": "+"}.get(bias_marker(a["mean"], a["gt"]), "0"),
                            a["n_seeds"]])
    return text, buf.getvalue()


# -- high-MI sweep --------------------------------------------------------------------------------

@dataclass
class SweepConfig:
    targets: list[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    dim: int = 3
    K: int = 2
    transform: str | None = None
    methods: list[str] = field(default_factory=lambda: ["minde_c", "minde_j", "mine", "nwj"])
    seeds: list[int] = field(default_factory=lambda: [0])
    n_train: int = 100_000
    n_test: int = 10_000
    sigma: list[float] = field(default_factory=lambda: [1.0])
    train: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    critic: dict = field(default_factory=dict)
    mc: dict = field(default_factory=dict)
    ksg_k: int = 10
    output_dir: str = "sweep"

    def __post_init__(self):
        if self.transform not in (None, "half_cube", "spiral"):
            raise ValueError("sweep transform must be none, half_cube or spiral")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown method(s): {bad}")

    @classmethod
    def load(cls, path) -> "SweepConfig":
        d = json.loads(Path(path).read_text())
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def sweep_task(target: float, dim: int, K: int, transform: str | None) -> tk.TaskSpec:
    transforms = (transform,) if transform else ()
    tag = transform or "plain"
    return tk.sparse_task(dim, dim, K, target, transforms,
                          task_id=f"sweep-{tag}-{dim}x{dim}-{target:g}",
                          name=f"{tag} Mn {dim}x{dim} MI={target:g}")


def high_mi_sweep(cfg: SweepConfig) -> Path:
    out = resolve_output(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    eff = {"n_train": cfg.n_train, "n_test": cfg.n_test, "sigma": list(cfg.sigma),
           "train": TrainConfig(**cfg.train).to_dict(),
           "arch": {**_arch_defaults(), **cfg.arch},
           "critic": bl.CriticConfig(**cfg.critic).to_dict(),
           "mc": vars(est.McConfig(**cfg.mc)).copy(), "ksg_k": cfg.ksg_k}
    rows = []
    for target in cfg.targets:
        spec = sweep_task(target, cfg.dim, cfg.K, cfg.transform)
        gt = tk.ground_truth(spec).mi
        groups: dict[str, list[str]] = {}
        for m in cfg.methods:
            groups.setdefault(method_group(m), []).append(m)
        for group, methods in groups.items():
            for seed in cfg.seeds:
                recs = _run_spec(spec, group, methods, seed, eff)
                for r in recs:
                    rows.append({**r, "target": target, "lam": spec.params["lam"], "gt": gt})
    write_sweep(out, rows)
    return out


def _run_spec(spec, group, methods, seed, eff):
    data_rng, train_rng, _ = cell_streams(seed, spec.task_id, group, group)
    x_tr, y_tr, x_te, y_te = prepare_data(spec, eff["n_train"], eff["n_test"], data_rng)
    model = None
    if group.startswith("minde"):
        model = fit_minde(group, spec, x_tr, y_tr, eff["train"], eff["arch"], train_rng)
    elif group != "ksg":
        crit = bl.CriticConfig(**{**eff["critic"], "seed": int(train_rng.integers(2 ** 31))})
        model = bl.train_critic(group, x_tr, y_tr, crit, rng=train_rng)
    out = []
    for method in methods:
        for sigma in (eff["sigma"] if method.endswith("_sigma") else [None]):
            _, _, est_rng = cell_streams(seed, spec.task_id, group, f"{method}:{sigma}")
            if group.startswith("minde"):
                res = est.estimate_mi(model, x_te, y_te, method, sigma=sigma,
                                      mc=est.McConfig(**eff["mc"]), rng=est_rng)
            elif group == "ksg":
                res = bl.ksg(x_te, y_te, eff["ksg_k"])
            else:
                res = bl.estimate(group, x_te, y_te, critic=model,
                                  batch_size=eff["critic"]["batch_size"])
            out.append({"method": method, "seed": seed, "sigma": "" if sigma is None else sigma,
                        "estimate": res.mean, "stderr": res.stderr})
    return out


def write_sweep(out: Path, rows: list[dict]) -> None:
    fields = ("target", "lam", "gt", "method", "seed", "sigma", "estimate", "stderr")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])
    (out / "sweep.csv").write_text(buf.getvalue())
    series: dict[str, dict] = {}
    for r in rows:
        key = r["method"] if r["sigma"] == "" else f"{r['method']}(s={r['sigma']:g})"
        s = series.setdefault(key, {"gt": [], "estimate": [], "stderr": []})
        s["gt"].append(r["gt"])
        s["estimate"].append(r["estimate"])
        s["stderr"].append(r["stderr"])
    (out / "plot_data.json").write_text(json.dumps(series, indent=2, sort_keys=True) + "\n")


# -- selftest -------------------------------------------------------------------------------------

def selftest(n: int = 20_000, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Analytic-oracle checks of every estimator variant (no training)."""
    rng = np.random.default_rng(seed)
    sched = VpSchedule()
    mc = est.McConfig(n_runs=1)
    results = []
    for rho in (0.3, 0.6, 0.9):
        cov = np.array([[1.0, rho], [rho, 1.0]])
        oracle = est.GaussianPairOracle(cov, 1, sched)
        z = rng.multivariate_normal(np.zeros(2), cov, size=n)
        gt = -0.5 * np.log1p(-rho * rho)
        for variant in est.EstimatorVariant:
            sigma = 1.0 if variant.needs_sigma else None
            r = est.estimate_mi(oracle, z[:, :1], z[:, 1:], variant, sigma=sigma, mc=mc, rng=rng)
            ok = abs(r.mean - gt) <= 4 * r.stderr + 1e-3
            results.append((f"{variant.value} rho={rho}", ok,
                            f"{r.mean:.4f} +- {r.stderr:.4f} vs {gt:.4f}"))
    for dim in (1, 2, 5):
        x = rng.standard_normal((n, dim)) * 1.5
        score = est.GaussianScore(None, 2.25 * np.eye(dim), sched)
        r = est.entropy(score, x, sigma=1.0, schedule=sched, mc=mc, rng=rng)
        gt = 0.5 * dim * np.log(2 * np.pi * np.e * 2.25)
        results.append((f"entropy N={dim}", abs(r.mean - gt) <= 4 * r.stderr + 1e-3,
                        f"{r.mean:.4f} +- {r.stderr:.4f} vs {gt:.4f}"))
    return results


# -- entry point ----------------------------------------------------------------------------------

def _parse_list(s: str, cast):
    return [cast(v) for v in s.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffmi", description="Diffusion-based MI estimation "
                                "benchmark runner.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run a benchmark config")
    r.add_argument("config")
    s = sub.add_parser("sweep", help="high-MI sweep on the sparse 3x3 family")
    s.add_argument("config")
    for sp in (r, s):
        sp.add_argument("--seeds", help="comma separated seeds (overrides config)")
        sp.add_argument("--variant", help="comma separated methods (overrides config)")
        sp.add_argument("--sigma", help="comma separated sigma values for the _sigma variants")
        sp.add_argument("--output", help="output directory (overrides config)")
    r.add_argument("--desk-scale", action="store_true",
                   help=f"cap iterations at {DESK_MAX_ITERATIONS} and keep tasks with "
                        f"dim <= {DESK_MAX_DIM}")
    r.add_argument("--workers", type=int, help="worker processes")

    t = sub.add_parser("table", help="render a results directory")
    t.add_argument("results_dir")
    sub.add_parser("selftest", help="analytic-oracle estimator checks")
    return p


def _override(cfg, args):
    if args.seeds:
        cfg.seeds = _parse_list(args.seeds, int)
    if args.variant:
        cfg.methods = _parse_list(args.variant, str)
    if args.sigma:
        cfg.sigma = _parse_list(args.sigma, float)
    if args.output:
        cfg.output_dir = args.output
    cfg.__post_init__()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.verb == "run":
        cfg = _override(RunConfig.load(args.config), args)
        if args.workers:
            cfg.workers = args.workers
        if args.desk_scale:
            cfg = apply_desk_scale(cfg)
        out, n_fail = run(cfg, progress=args.verbose)
        text, table_csv = render_table(out) if (out / "results.csv").stat().st_size else ("", "")
        (out / "table.txt").write_text(text)
        (out / "table.csv").write_text(table_csv)
        print(text, end="")
        if n_fail:
            print(f"{n_fail} job(s) failed; see {out / 'summary.json'}", file=sys.stderr)
            return 2
        return 0
    if args.verb == "table":
        text, table_csv = render_table(resolve_output(args.results_dir))
        print(text, end="")
        (resolve_output(args.results_dir) / "table.csv").write_text(table_csv)
        return 0
    if args.verb == "sweep":
        cfg = SweepConfig.load(args.config)
        if args.seeds:
            cfg.seeds = _parse_list(args.seeds, int)
        if args.variant:
            cfg.methods = _parse_list(args.variant, str)
        if args.sigma:
            cfg.sigma = _parse_list(args.sigma, float)
        if args.output:
            cfg.output_dir = args.output
        cfg.__post_init__()
        out = high_mi_sweep(cfg)
        print(out / "sweep.csv")
        return 0
    if args.verb == "selftest":
        results = selftest()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return 0 if all(ok for _, ok, _ in results) else 1
    return 1
