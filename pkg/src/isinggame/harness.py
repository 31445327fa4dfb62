"""Experiment orchestration: model batches, algorithm grids, CSV results, summaries."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from isinggame import classic, fictitious, mnist, regret
from isinggame.classic import IterationSpec, Marginals
from isinggame.exact import BRUTE_FORCE_CAP, TRANSFER_CAP, ExactResult, OracleInfeasible, exact
from isinggame.model import IsingModel, ModelClass, generate_model
from isinggame.rng import derive_seed
from isinggame.stats import (
    marginal_error,
    nonconvergence_proportion,
    paired_z_test,
    stratified_z_test,
    wald_proportion,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("bl", "mf", "bp", "trw", "gs", "nr", "mw_er", "mw_er_cf", "mw_sr", "mw_sr_cf",
              "fp_ce", "fp_msne")

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "bl": {},
    "mf": {"max_iters": 10**6, "tol": 1e-5},
    "bp": {"max_iters": 10**5, "tol": 1e-7, "damping": 0.5},
    "trw": {"max_iters": 10**5, "tol": 1e-7, "damping": 0.5, "rho": 0.55},
    "gs": {"iters": 10**6, "burn_in": 0.1},
    "nr": {"iters": 10**5, "damping": 0.01, "mu": 1.0},
    "mw_er": {"iters": 10**5},
    "mw_er_cf": {"iters": 10**5, "eta": 0.01},
    "mw_sr": {"iters": 10**5},
    "mw_sr_cf": {"iters": 10**5, "eta": 0.01},
    "fp_ce": {"m": 15},
    "fp_msne": {"m": 15},
}


class ConfigError(ValueError):
    pass


def run_algorithm(name: str, model: IsingModel, params: dict[str, Any] | None = None,
                  seed: int = 0) -> Marginals:
    """Dispatch one named algorithm with defaults overridden by ``params``."""
    if name not in DEFAULT_PARAMS:
        raise ConfigError(f"unknown algorithm {name!r}")
    p = {**DEFAULT_PARAMS[name], **(params or {})}
    if name == "bl":
        return classic.baseline(model)
    if name == "mf":
        return classic.mean_field(model, IterationSpec(int(p["max_iters"]), float(p["tol"]), 0.0), seed)
    if name in ("bp", "trw"):
        spec = IterationSpec(int(p["max_iters"]), float(p["tol"]), float(p["damping"]))
        if name == "bp":
            return classic.belief_prop(model, spec, seed)
        return classic.trw(model, float(p["rho"]), spec, seed)
    if name == "gs":
        return classic.gibbs(model, int(p["iters"]), float(p["burn_in"]), seed)
    if name == "nr":
        return regret.regret_matching_run(model, int(p["iters"]), seed, float(p["damping"]),
                                          float(p["mu"]), keep_joint=False)[1]
    if name.startswith("mw_"):
        base = regret.MWU_VARIANTS[name]
        cfg = regret.MwuConfig(base.regret_kind, base.step_kind, float(p.get("eta", base.eta)),
                               int(p["iters"]))
        return regret.mwu_run(model, cfg, seed, keep_joint=False)[1]
    return fictitious.fp_run(model, int(p["m"]), name[3:], seed)[0]


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    params: dict[str, Any] = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    name: str
    d: tuple[int, ...]
    classes: list[ModelClass]
    samples: int
    algorithms: list[AlgorithmSpec]
    seed: int = 0
    output: str | None = None
    source: str = "synthetic"  # synthetic | mnist
    mnist: dict[str, Any] = field(default_factory=dict)
    reference: AlgorithmSpec | None = None  # approximate reference when no exact oracle is used
    record_runtime: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.d = tuple(int(v) for v in np.atleast_1d(self.d))
        if not self.d or min(self.d) < 2:
            raise ConfigError("grid sizes must be >= 2")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for a in self.algorithms:
            if a.name not in DEFAULT_PARAMS:
                raise ConfigError(f"unknown algorithm {a.name!r}")
        if self.source not in ("synthetic", "mnist"):
            raise ConfigError(f"unknown source {self.source!r}")
        if self.source == "synthetic" and not self.classes:
            raise ConfigError("synthetic experiments need at least one model class")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        try:
            classes = [ModelClass(c["kind"], float(c["w"]), None if c.get("q") is None else float(c["q"]))
                       for c in data.get("classes", [])]
            for spec in data.get("class_grid", []):
                for w in spec["w"]:
                    for q in spec.get("q", [None]):
                        classes.append(ModelClass(spec["kind"], float(w), None if q is None else float(q)))
            algos = [AlgorithmSpec(a["name"], {k: v for k, v in a.items() if k != "name"})
                     for a in data["algorithms"]]
            ref = data.get("reference")
            return cls(
                name=str(data["name"]),
                d=data.get("d", 28),
                classes=classes,
                samples=int(data["samples"]),
                algorithms=algos,
                seed=int(data.get("seed", 0)),
                output=data.get("output"),
                source=data.get("source", "synthetic"),
                mnist=dict(data.get("mnist") or {}),
                reference=None if ref is None else AlgorithmSpec(ref["name"], {k: v for k, v in ref.items() if k != "name"}),
                record_runtime=bool(data.get("record_runtime", False)),
                jobs=int(data.get("jobs", 1)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed experiment config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> ExperimentConfig:
        return cls.from_dict(yaml.safe_load(Path(path).read_text()))


@dataclass(frozen=True)
class RunRecord:
    model_id: str
    d: int
    model_class: str
    w: float
    q: float | None
    algorithm: str
    seed: int
    iterations: int
    converged: bool
    avg_marginal_error: float
    runtime_ms: float | None

    def __post_init__(self):
        if not 0.0 <= self.avg_marginal_error <= 1.0:
            raise ValueError("average marginal error must lie in [0, 1]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.model_id, self.algorithm)


CSV_COLUMNS = ("model_id", "d", "class", "w", "q", "algorithm", "seed", "iterations", "converged",
               "avg_marginal_error", "runtime_ms")


def _fmt(x: float | None) -> str:
    return "NA" if x is None else format(float(x), ".17g")


def record_to_row(r: RunRecord) -> list[str]:
    return [r.model_id, str(r.d), r.model_class, _fmt(r.w), _fmt(r.q), r.algorithm, str(r.seed),
            str(r.iterations), "true" if r.converged else "false", _fmt(r.avg_marginal_error),
            _fmt(r.runtime_ms)]


def row_to_record(row: dict[str, str]) -> RunRecord:
    def num(s):
        return None if s in ("NA", "") else float(s)

    return RunRecord(row["model_id"], int(row["d"]), row["class"], float(row["w"]), num(row["q"]),
                     row["algorithm"], int(row["seed"]), int(row["iterations"]),
                     row["converged"] == "true", float(row["avg_marginal_error"]), num(row["runtime_ms"]))


def write_csv(records, path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in sorted(records, key=lambda r: r.key):
        w.writerow(record_to_row(r))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        return [row_to_record(row) for row in csv.DictReader(fh)]


# -- jobs ---------------------------------------------------------------


@dataclass(frozen=True)
class ModelJob:
    model_id: str
    d: int
    cls: ModelClass | None
    model_seed: int
    image_index: int | None = None


def _model_id(d: int, c: ModelClass, sample: int) -> str:
    q = "" if c.q is None else f"-q{c.q:g}"
    return f"d{d}-{c.kind}-w{c.w:g}{q}-s{sample:04d}"


def plan_jobs(cfg: ExperimentConfig) -> list[ModelJob]:
    jobs = []
    if cfg.source == "synthetic":
        for d in cfg.d:
            for c in cfg.classes:
                for s in range(cfg.samples):
                    jobs.append(ModelJob(_model_id(d, c, s), d, c, derive_seed(cfg.seed, "model", d, c.label, s)))
    else:
        digit = cfg.mnist.get("digit")
        tag = "all" if digit is None else str(digit)
        for s in range(cfg.samples):
            jobs.append(ModelJob(f"mnist-{tag}-{s:04d}", 28, None, derive_seed(cfg.seed, "image", s), s))
    return jobs


class _MnistSource:
    """Learned parameters and selected test images, built once per experiment."""

    def __init__(self, cfg: ExperimentConfig):
        opts = cfg.mnist
        root = mnist.data_dir(opts.get("data_dir"))
        if root is None:
            raise FileNotFoundError(f"MNIST directory not configured (set {mnist.DATA_ENV})")
        digit = opts.get("digit")
        thr = float(opts.get("threshold", 0.5))
        train = mnist.load_split(root, "train", digit)
        test = mnist.load_split(root, "test", digit)
        self.weights, self.biases = mnist.learn_params(mnist.binarize(train.pixels, thr),
                                                       float(opts.get("weight_scale", 2.0)))
        rng = np.random.default_rng(derive_seed(cfg.seed, "mnist-select"))
        self.picks = rng.choice(test.count, size=cfg.samples, replace=False)
        self.test = test
        self.threshold = thr
        self.noise = float(opts.get("noise", 0.05))

    def model(self, job: ModelJob) -> IsingModel:
        idx = int(self.picks[job.image_index])
        clean = mnist.binarize(self.test.pixels[idx], self.threshold)
        noisy = mnist.add_noise(clean, self.noise, job.model_seed)
        meta = {"class": "mnist", "test_index": idx, "seed": job.model_seed}
        return mnist.observation_model(self.weights, self.biases, noisy, self.noise, meta)


def _reference(cfg: ExperimentConfig, model: IsingModel, job: ModelJob) -> np.ndarray:
    if cfg.reference is not None:
        seed = derive_seed(cfg.seed, "reference", job.model_id)
        return run_algorithm(cfg.reference.name, model, cfg.reference.params, seed).p
    return exact(model).marginals


def _run_model_job(cfg: ExperimentConfig, job: ModelJob, todo: list[str], source=None) -> list[RunRecord]:
    if cfg.source == "synthetic":
        model = generate_model(job.d, job.cls, job.model_seed)
        cls_name, w, q = job.cls.kind, job.cls.w, job.cls.q
    else:
        model = source.model(job)
        cls_name, w, q = "mnist", float(np.abs(model.weights).max()), None
    ref = _reference(cfg, model, job)
    out = []
    for spec in cfg.algorithms:
        if spec.name not in todo:
            continue
        seed = derive_seed(cfg.seed, "algo", job.model_id, spec.name)
        t0 = time.perf_counter()
        est = run_algorithm(spec.name, model, spec.params, seed)
        ms = (time.perf_counter() - t0) * 1e3 if cfg.record_runtime else None
        out.append(RunRecord(job.model_id, model.grid_d or job.d, cls_name, w, q, spec.name, seed, est.iterations_used,
                             est.converged, marginal_error(est, ref), ms))
    return out


_SOURCES: dict[tuple, _MnistSource] = {}


def _job_worker(args):
    cfg, job, todo = args
    source = None
    if cfg.source == "mnist":
        # one learned source per worker process, not per image
        key = (repr(sorted(cfg.mnist.items())), cfg.seed, cfg.samples)
        if key not in _SOURCES:
            _SOURCES[key] = _MnistSource(cfg)
        source = _SOURCES[key]
    return _run_model_job(cfg, job, todo, source)


def check_feasible(cfg: ExperimentConfig) -> None:
    if cfg.source == "synthetic" and cfg.reference is None:
        for d in cfg.d:
            if d > TRANSFER_CAP and d * d > BRUTE_FORCE_CAP:
                raise OracleInfeasible(f"no exact oracle for a {d}x{d} grid; configure a reference")
    if cfg.source == "mnist" and cfg.reference is None:
        raise ConfigError("MNIST experiments need an approximate reference algorithm")


def run_experiment(cfg: ExperimentConfig, output: str | Path | None = None, jobs: int | None = None,
                   progress: bool = False) -> list[RunRecord]:
    """Run every (model, algorithm) pair not already present in ``output``.

    Rows are a function of the config and master seed only: each model and
    each algorithm run draws from its own derived seed, so resuming or
    running jobs in parallel never changes the results.
    """
    check_feasible(cfg)
    out_path = Path(output or cfg.output) if (output or cfg.output) else None
    done: dict[tuple[str, str], RunRecord] = {}
    if out_path is not None and out_path.exists():
        done = {r.key: r for r in read_csv(out_path)}
    plan = []
    for job in plan_jobs(cfg):
        todo = [a.name for a in cfg.algorithms if (job.model_id, a.name) not in done]
        if todo:
            plan.append((cfg, job, todo))
    workers = jobs or cfg.jobs
    records = dict(done)
    if workers > 1 and len(plan) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, rows in enumerate(pool.map(_job_worker, plan)):
                records.update({r.key: r for r in rows})
                if progress:
                    log.info("%s: %d/%d models", cfg.name, i + 1, len(plan))
    else:
        source = _MnistSource(cfg) if cfg.source == "mnist" and plan else None
        for i, (c, job, todo) in enumerate(plan):
            records.update({r.key: r for r in _run_model_job(c, job, todo, source)})
            if progress:
                log.info("%s: %d/%d models (%s)", cfg.name, i + 1, len(plan), job.model_id)
            if out_path is not None and (i + 1) % 10 == 0:
                write_csv(records.values(), out_path)
    result = sorted(records.values(), key=lambda r: r.key)
    if out_path is not None:
        write_csv(result, out_path)
    return result


# -- summaries ----------------------------------------------------------


def _cell_key(r: RunRecord) -> tuple:
    return (r.d, r.model_class, r.w, r.q if r.q is not None else -1.0)


def _cell_label(key) -> str:
    d, kind, w, q = key
    return f"d={d} {kind} w={w:g}" + ("" if q < 0 else f" q={q:g}")


def errors_by(records, cell=None) -> dict[str, dict[str, float]]:
    """``{algorithm: {model_id: error}}`` restricted to one cell when given."""
    out: dict[str, dict[str, float]] = {}
    for r in records:
        if cell is not None and _cell_key(r) != cell:
            continue
        out.setdefault(r.algorithm, {})[r.model_id] = r.avg_marginal_error
    return out


def paired_arrays(errs: dict[str, dict[str, float]], a: str, b: str) -> tuple[np.ndarray, np.ndarray]:
    ids = sorted(set(errs.get(a, {})) & set(errs.get(b, {})))
    return np.array([errs[a][i] for i in ids]), np.array([errs[b][i] for i in ids])


def summarize(records, alpha: float = 0.05) -> str:
    """Text tables: mean error with 95% CI per cell, tests against bl, non-convergence."""
    records = list(records)
    cells = sorted({_cell_key(r) for r in records})
    algos = [a for a in ALGORITHMS if any(r.algorithm == a for r in records)]
    lines = []
    z = 1.959963984540054
    lines.append("# mean marginal error (95% CI) per cell")
    for cell in cells:
        errs = errors_by(records, cell)
        lines.append(f"[{_cell_label(cell)}]")
        for a in algos:
            vals = np.array(list(errs.get(a, {}).values()))
            if vals.size == 0:
                continue
            half = z * vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else float("nan")
            test = ""
            if a != "bl" and "bl" in errs and vals.size > 1:
                t = paired_z_test(*paired_arrays(errs, a, "bl"), alpha=alpha)
                test = f"  vs bl: {t.decision} (z={t.z:.3g}, p={t.p:.3g})"
            lines.append(f"  {a:9s} {vals.mean():.5f} +/- {half:.5f}  n={vals.size}{test}")
    strata: dict[tuple, list] = {}
    for cell in cells:
        if cell[3] >= 0:
            strata.setdefault(cell[:3], []).append(cell)
    if strata:
        lines.append("# pooled over q (stratified z-test against bl)")
        for (d, kind, w), group in sorted(strata.items()):
            for a in algos:
                if a == "bl":
                    continue
                pairs = [paired_arrays(errors_by(records, c), a, "bl") for c in group]
                if any(p[0].size < 2 for p in pairs):
                    continue
                t = stratified_z_test(pairs, alpha=alpha)
                lines.append(f"  d={d} {kind} w={w:g} {a:9s} {t.decision} (z={t.z:.3g}, p={t.p:.3g})")
    iterative = [a for a in ("bp", "trw", "mf") if a in algos]
    if iterative:
        lines.append("# proportion of non-convergent runs (Wald 95% CI)")
        for cell in cells:
            rows = [r for r in records if _cell_key(r) == cell]
            for a in iterative:
                sub = [r for r in rows if r.algorithm == a]
                if sub:
                    pr = nonconvergence_proportion(sub, a)
                    lines.append(f"  {_cell_label(cell):28s} {a:4s} {pr.value:.3f} [{pr.lo:.3f}, {pr.hi:.3f}]  ({pr.k}/{pr.n})")
    return "\n".join(lines) + "\n"


__all__ = [
    "ALGORITHMS", "AlgorithmSpec", "ConfigError", "ExactResult", "ExperimentConfig", "RunRecord",
    "read_csv", "run_algorithm", "run_experiment", "summarize", "write_csv", "wald_proportion",
]
