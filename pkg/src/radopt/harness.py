"""Seeded experiment runner, step-size grid search and threshold tables."""

import csv
import io
import json
import logging
import math
import os
import re
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from . import data as data_mod
from .exceptions import DivergenceError, FeasibilityError, PoisonedStateError, RetractionError
from .manifolds import Grassmann, Sphere, Stiefel
from .optim import BatchSchedule, OptimizerSpec, StepSchedule, minimize
from .problems import LrmcProblem, PcaProblem

__all__ = [
    "METRICS_HEADER",
    "ExperimentConfig",
    "RunRecord",
    "TrialResult",
    "GridResult",
    "build_problems",
    "run_trial",
    "run",
    "grid_search",
    "iterations_to_threshold",
    "write_metrics_csv",
    "read_metrics_csv",
    "threshold_table",
    "format_table",
    "load_config_file",
    "PAPER_ALPHAS",
]

logger = logging.getLogger(__name__)

METRICS_HEADER = ("k", "alpha_k", "b_k", "f_train", "f_test", "gnorm_train", "gnorm_test",
                  "elapsed_s")
DIVERGENCE_CAP = 1e12
PAPER_ALPHAS = tuple(10.0 ** -i for i in range(1, 9))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one family of trials.

    ``data`` is either a file path or ``synth:key=value,...``. For synthetic
    data ``N`` is the training-set size; the test set is generated alongside
    it at the ratio implied by ``test_fraction``.
    """

    problem: str = "pca"
    data: str = "synth:n=20,p=3,N=512,noise=0.1"
    rank: int = 3
    manifold: str = "auto"
    method: str = "ramsgrad"
    step: str = "constant"
    alpha: float = 1e-3
    batch: int = 64
    batch_schedule: str = "constant"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iters: int = 1000
    seeds: tuple = (0, 1, 2)
    threshold: float = 2.0
    cadence: int = 0
    test_fraction: float = 0.2
    data_seed: int = 0
    delimiter: str = ","
    timing: bool = True
    n_jobs: int = 1
    out: Optional[str] = None

    def __post_init__(self):
        if self.problem not in ("pca", "lrmc"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")
        if not 0 <= self.test_fraction < 1:
            raise ValueError("test_fraction must lie in [0, 1)")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def optimizer_spec(self):
        return OptimizerSpec(
            method=self.method, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            step=StepSchedule(self.step, self.alpha),
            batch=BatchSchedule.parse(self.batch_schedule, self.batch))

    def metric_cadence(self):
        if self.cadence > 0:
            return self.cadence
        return 1 if self.iters <= 2000 else math.ceil(self.iters / 2000)

    def run_name(self, seed):
        sched = str(BatchSchedule.parse(self.batch_schedule, self.batch)).replace(":", "-")
        return (f"{self.problem}_{self.method}_{self.step}_a{self.alpha:g}"
                f"_b{self.batch}-{sched}_s{seed}")


@dataclass
class RunRecord:
    k: int
    alpha_k: float
    b_k: int
    f_train: float
    f_test: float
    gnorm_train: float
    gnorm_test: float
    elapsed_s: float


@dataclass
class TrialResult:
    seed: int
    records: List[RunRecord] = field(default_factory=list)
    diverged: bool = False
    reason: str = ""

    @property
    def final(self):
        return self.records[-1] if self.records else None


def _parse_synth(text):
    body = text.split(":", 1)[1]
    if body.startswith(("pca:", "lrmc:")):
        body = body.split(":", 1)[1]
    out = {}
    for part in filter(None, body.split(",")):
        key, _, val = part.partition("=")
        out[key.strip()] = float(val)
    return out


def _load_data(config):
    """Return ``(train, test_or_None)`` datasets for the configured problem."""
    tf = config.test_fraction
    if config.data.startswith("synth"):
        kw = _parse_synth(config.data)
        n_train = int(kw.get("N", 512))
        n_test = int(round(n_train * tf / (1 - tf))) if tf > 0 else 0
        seed = int(kw.get("seed", config.data_seed))
        n, p = int(kw.get("n", 20)), int(kw.get("p", config.rank))
        noise = kw.get("noise", 0.0)
        if config.problem == "pca":
            full = data_mod.synth_pca(n, p, n_train + n_test, noise, seed)
            train = data_mod.DenseDataset(full.samples[:n_train], full.provenance,
                                          basis=full.basis)
            test = (data_mod.DenseDataset(full.samples[n_train:], full.provenance,
                                          basis=full.basis) if n_test else None)
        else:
            full = data_mod.synth_lrmc(n, n_train + n_test, p, kw.get("obs", 0.5), noise, seed)
            train = full.select_columns(np.arange(n_train))
            test = full.select_columns(np.arange(n_train, n_train + n_test)) if n_test else None
        return train, test
    path = config.data
    if config.problem == "pca":
        if re.search(r"(\.idx|-ubyte)(\.gz)?$", path):
            ds = data_mod.read_idx(path)
        else:
            ds = data_mod.read_dense_csv(path, delimiter=config.delimiter)
    else:
        ds = data_mod.read_ratings_csv(path, delimiter=config.delimiter)
    if tf == 0:
        return ds, None
    return data_mod.split(ds, 1 - tf, config.data_seed)


def _make_manifold(config, n):
    kind = config.manifold
    if kind == "auto":
        kind = "stiefel" if config.problem == "pca" else "grassmann"
    if kind == "sphere":
        return Sphere(n)
    if kind == "stiefel":
        return Stiefel(n, config.rank)
    if kind == "grassmann":
        return Grassmann(n, config.rank)
    raise ValueError(f"unknown manifold {kind!r}")


def build_problems(config):
    """Train and (optional) test problems sharing one manifold."""
    train, test = _load_data(config)
    if config.problem == "pca":
        manifold = _make_manifold(config, train.n_features)
        mk = lambda ds: PcaProblem(ds.samples, config.rank, manifold)  # noqa: E731
    else:
        manifold = _make_manifold(config, train.shape[0])
        mk = lambda ds: LrmcProblem.from_ratings(ds, config.rank, manifold)  # noqa: E731
    return mk(train), (mk(test) if test is not None else None)


def _seeds(seed):
    init, batches = np.random.SeedSequence(seed).spawn(2)
    return init, batches


def run_trial(config, seed, problems=None, x0=None):
    """One seeded optimizer run; metrics use full (not mini-batch) gradients."""
    train, test = problems if problems is not None else build_problems(config)
    manifold = train.manifold
    init_seed, batch_seed = _seeds(seed)
    if x0 is None:
        x0 = manifold.random_point(init_seed)
    spec = config.optimizer_spec()
    cadence = config.metric_cadence()
    result = TrialResult(seed)
    clock = {"spent": 0.0, "mark": time.perf_counter()}

    def record(k, x, alpha, b):
        clock["spent"] += time.perf_counter() - clock["mark"]
        f_tr = train.value(x)
        if not (np.isfinite(f_tr) and f_tr <= DIVERGENCE_CAP):
            raise DivergenceError(f"objective {f_tr!r} at k={k}")
        g_tr = train.grad_norm(x)
        f_te = test.value(x) if test is not None else math.nan
        g_te = test.grad_norm(x) if test is not None else math.nan
        elapsed = clock["spent"] if config.timing else math.nan
        result.records.append(RunRecord(k, alpha, b, f_tr, f_te, g_tr, g_te, elapsed))
        clock["mark"] = time.perf_counter()

    def callback(k, x, alpha, b):
        if k == 1 or k % cadence == 0:
            record(k, x, alpha, b)
        return False

    try:
        # overflow shows up as a non-finite iterate and is reported as divergence
        with np.errstate(over="ignore", invalid="ignore"):
            x, _ = minimize(train, spec, x0, config.iters, seed=batch_seed, callback=callback)
            k = config.iters + 1
            record(k, x, spec.step(k), spec.batch(k, train.n_samples))
    except (DivergenceError, PoisonedStateError, RetractionError, FeasibilityError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        result.diverged = True
        result.reason = f"{type(exc).__name__}: {exc}"
        logger.info("seed %d diverged: %s", seed, result.reason)
    return result


def _run_many(jobs, n_jobs):
    if n_jobs == 1:
        return [run_trial(*job) for job in jobs]
    return Parallel(n_jobs=n_jobs)(delayed(run_trial)(*job) for job in jobs)


def run(config, problems=None):
    """Run every seed of ``config``; returns ``{seed: TrialResult}``.

    Writes one metrics CSV per seed plus ``manifest.jsonl`` when
    ``config.out`` is set.
    """
    problems = problems if problems is not None else build_problems(config)
    results = _run_many([(config, s, problems) for s in config.seeds], config.n_jobs)
    out = {r.seed: r for r in results}
    if config.out:
        _write_outputs(config, out)
    return out


def _write_outputs(config, results):
    os.makedirs(config.out, exist_ok=True)
    manifest = os.path.join(config.out, "manifest.jsonl")
    entries = []
    for seed, res in sorted(results.items()):
        name = config.run_name(seed) + ".csv"
        write_metrics_csv(os.path.join(config.out, name), res.records)
        entries.append({"file": name, "problem": config.problem, "method": config.method,
                        "step": config.step, "alpha": config.alpha, "batch": config.batch,
                        "batch_schedule": config.batch_schedule, "seed": seed,
                        "diverged": res.diverged, "reason": res.reason})
    with open(manifest, "a", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def metrics_csv_text(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in records:
        w.writerow([_fmt(getattr(r, name)) for name in METRICS_HEADER])
    return buf.getvalue()


def write_metrics_csv(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(metrics_csv_text(records))


def read_metrics_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [RunRecord(int(row[0]), float(row[1]), int(row[2]),
                          *(float(v) for v in row[3:])) for row in reader]


def iterations_to_threshold(records, threshold):
    """First recorded ``k`` whose full training-gradient norm is below ``threshold``.

    A plain sequence of norms is indexed from 1. Returns None if the
    threshold is never reached.
    """
    if not records:
        raise ValueError("records must be non-empty")
    for i, r in enumerate(records, start=1):
        if isinstance(r, RunRecord):
            if r.gnorm_train < threshold:
                return r.k
        elif float(r) < threshold:
            return i
    return None


@dataclass
class GridResult:
    best_alpha: Optional[float]
    scores: dict
    results: dict

    @property
    def viable(self):
        return self.best_alpha is not None


def grid_search(config, alphas=PAPER_ALPHAS, problems=None):
    """Pick the step size with the lowest seed-averaged final training objective.

    A step size is discarded if any seed diverges; ties go to the smaller
    step size. ``best_alpha`` is None when nothing is viable.
    """
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alpha set must be non-empty")
    problems = problems if problems is not None else build_problems(config)
    configs = {a: replace(config, alpha=a) for a in alphas}
    jobs = [(configs[a], s, problems) for a in alphas for s in config.seeds]
    flat = _run_many(jobs, config.n_jobs)
    results, scores = {}, {}
    for (cfg, seed, _), res in zip(jobs, flat):
        results.setdefault(cfg.alpha, {})[seed] = res
    for a in alphas:
        trials = results[a].values()
        if any(t.diverged for t in trials):
            scores[a] = None
        else:
            scores[a] = float(np.mean([t.final.f_train for t in trials]))
    viable = [(s, a) for a, s in scores.items() if s is not None]
    best = min(viable)[1] if viable else None
    if config.out:
        for a in alphas:
            _write_outputs(configs[a], results[a])
    return GridResult(best, scores, results)


def threshold_table(out_dir, threshold):
    """Iterations-to-threshold per (method, step, alpha, batch) from a run directory.

    Returns rows with the mean over seeds that reached the threshold, the
    number that did, and the number of seeds.
    """
    groups = {}
    with open(os.path.join(out_dir, "manifest.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            e = json.loads(line)
            key = (e["problem"], e["method"], e["step"], e["alpha"], e["batch"],
                   e["batch_schedule"])
            groups.setdefault(key, {})[e["seed"]] = e
    rows = []
    for key in sorted(groups):
        counts = []
        for e in groups[key].values():
            recs = read_metrics_csv(os.path.join(out_dir, e["file"]))
            counts.append(None if e["diverged"] or not recs
                          else iterations_to_threshold(recs, threshold))
        hit = [c for c in counts if c is not None]
        problem, method, step, alpha, batch, sched = key
        rows.append({"problem": problem, "method": method, "step": step, "alpha": alpha,
                     "batch": batch, "batch_schedule": sched,
                     "iterations": float(np.mean(hit)) if hit else None,
                     "reached": len(hit), "seeds": len(counts)})
    return rows


def format_table(rows):
    lines = [f"{'method':<10} {'step':<12} {'alpha':>8} {'batch':>6} {'schedule':<12} "
             f"{'iters':>10} {'reached':>8}"]
    for r in rows:
        its = "-" if r["iterations"] is None else f"{r['iterations']:.1f}"
        lines.append(f"{r['method']:<10} {r['step']:<12} {r['alpha']:>8.0e} {r['batch']:>6} "
                     f"{r['batch_schedule']:<12} {its:>10} {r['reached']:>4}/{r['seeds']}")
    return "\n".join(lines)


def _coerce(name, text):
    default = ExperimentConfig.__dataclass_fields__[name].default
    if name == "seeds":
        return tuple(int(s) for s in str(text).split(",") if s.strip())
    if name == "out":
        return text
    if isinstance(default, bool):
        return str(text).strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return str(text)


def load_config_file(path):
    """Parse a flat ``key = value`` file; keys use the CLI flag names."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip().lstrip("-").replace("-", "_")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            if key in ("alphas",):
                out[key] = val.strip()
                continue
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, val.strip())
    return out


def config_from_mapping(mapping):
    known = {f.name for f in fields(ExperimentConfig)}
    return ExperimentConfig(**{k: v for k, v in mapping.items() if k in known})


def config_to_mapping(config):
    return asdict(config)
