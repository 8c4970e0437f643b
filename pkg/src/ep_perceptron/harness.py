"""Seeded teacher-student experiment runner.

A run is a grid of (alpha, trial) cells. Each cell draws its own random
stream from ``SeedSequence([root_seed, alpha_index, trial])``, so results do
not depend on the order in which cells are executed or on the number of
worker processes. Per-cell records go to ``records.csv`` (fixed column order,
no timings, hence byte-identical between repeated runs); timings go to
``timings.csv`` and aggregates to ``summary.json``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import subprocess
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import EPConfig, ep_run
from .datagen import (LabelNoiseSpec, PatternEnsemble, flip_labels, glauber_states, label,
                      make_instance, perceptron_instance, sample_network)
from .free_energy import ep_run_learning
from .metrics import normalized_mse_db, p_nonzero, roc_and_auc
from .priors import PriorSet, SpikeSlab, ThetaMixture

log = logging.getLogger(__name__)

WORKERS_ENV = "EP_PERCEPTRON_WORKERS"

RECORD_COLUMNS = ["alpha", "trial", "seed", "n", "m", "converged", "iterations", "eps_final",
                  "mse_db", "auc_abs", "auc_pnz", "rho0", "rho_learned", "eta0", "eta_learned",
                  "true_density", "error"]


class ConfigError(ValueError):
    """Malformed experiment configuration; ``line`` and ``key`` locate the problem."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"field {key!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


@dataclass
class ExperimentConfig:
    """Everything that determines a run, besides the code itself.

    ``lam = None`` links the student slab precision to the teacher as
    1 / slab_std**2 (Bayes-optimal). ``eta_prior = None`` gives the student
    the true label-noise level when labels are noisy. ``units`` applies to the
    recurrent ensemble, where trial t trains perceptron t mod N of network
    t // N.
    """

    name: str = "custom"
    n: int = 128
    rho: float = 0.25
    slab_std: float = 1.0
    lam: Optional[float] = None
    eta_true: float = 1.0
    eta_prior: Optional[float] = None
    rho_learn: bool = False
    eta_learn: bool = False
    rho0_range: tuple = (0.05, 0.95)
    eta0_range: tuple = (0.5, 1.0)
    alphas: tuple = (0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    ensemble: str = "iid"
    u: int = 1
    update: str = "sync"
    d_h: int = 10
    n_trials: int = 10
    damping: float = 0.9995
    eps_stop: float = 1e-4
    max_iter: int = 50000
    lr_rho: float = 1e-5
    lr_eta: float = 1e-5
    root_seed: int = 0
    score_mode: str = "both"
    out_dir: Optional[str] = None

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.rho0_range = tuple(float(v) for v in self.rho0_range)
        self.eta0_range = tuple(float(v) for v in self.eta0_range)
        self.validate()

    def validate(self):
        def bad(key, msg):
            raise ConfigError(msg, key=key)
        if self.n < 2:
            bad("n", "need at least two weights")
        if not 0 < self.rho <= 1:
            bad("rho", "must lie in (0, 1]")
        if not self.slab_std > 0:
            bad("slab_std", "must be positive")
        if self.lam is not None and not self.lam > 0:
            bad("lam", "must be positive")
        if not 0.5 <= self.eta_true <= 1:
            bad("eta_true", "must lie in [0.5, 1]")
        if self.eta_prior is not None and not 0.5 < self.eta_prior <= 1:
            bad("eta_prior", "must lie in (0.5, 1]")
        if not self.alphas or any(a <= 0 for a in self.alphas):
            bad("alphas", "need a non-empty list of positive values")
        if self.n_trials < 1:
            bad("n_trials", "must be >= 1")
        if self.ensemble not in ("iid", "mvn", "recurrent"):
            bad("ensemble", "must be one of iid, mvn, recurrent")
        if self.score_mode not in ("abs_weight", "p_nonzero", "both"):
            bad("score_mode", "must be abs_weight, p_nonzero or both")
        if not (0 < self.rho0_range[0] <= self.rho0_range[1] < 1):
            bad("rho0_range", "must satisfy 0 < lo <= hi < 1")
        if not (0.5 <= self.eta0_range[0] <= self.eta0_range[1] <= 1):
            bad("eta0_range", "must satisfy 0.5 <= lo <= hi <= 1")
        try:
            self.ep_config()
            self.pattern_ensemble()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def student_lam(self) -> float:
        return 1.0 / self.slab_std ** 2 if self.lam is None else self.lam

    @property
    def noisy(self) -> bool:
        return self.eta_true < 1.0 or self.eta_learn or (self.eta_prior is not None
                                                         and self.eta_prior < 1.0)

    def ep_config(self) -> EPConfig:
        return EPConfig(damping=self.damping, eps_stop=self.eps_stop, max_iter=self.max_iter)

    def pattern_ensemble(self) -> PatternEnsemble:
        return PatternEnsemble(self.ensemble, self.u, self.update, self.d_h)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alphas"] = list(self.alphas)
        d["rho0_range"] = list(self.rho0_range)
        d["eta0_range"] = list(self.eta0_range)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_TUPLES = {"alphas", "rho0_range", "eta0_range"}
_BOOLS = {"rho_learn", "eta_learn"}
_INTS = {"n", "u", "d_h", "n_trials", "max_iter", "root_seed"}
_STRS = {"name", "ensemble", "update", "score_mode", "out_dir", "preset"}


def _parse_value(key: str, raw: str, line: Optional[int]):
    raw = raw.strip()
    try:
        if key in _TUPLES:
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if key in _BOOLS:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if key in _INTS:
            return int(raw)
        if key in _STRS:
            return raw
        if raw.lower() in ("none", "linked", ""):
            return None
        return float(raw)
    except ValueError as exc:
        raise ConfigError(str(exc), line=line, key=key) from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments) or a JSON object into raw fields."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
        out = {}
        for key, val in data.items():
            if key not in _FIELDS and key != "preset":
                raise ConfigError("unknown field", key=key)
            if isinstance(val, str) or key in _TUPLES and isinstance(val, str):
                val = _parse_value(key, val, None)
            out[key] = tuple(val) if key in _TUPLES else val
        return out
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, raw = (s.strip() for s in body.split("=", 1))
        if key not in _FIELDS and key != "preset":
            raise ConfigError("unknown field", line=lineno, key=key)
        if key in out:
            raise ConfigError("duplicate field", line=lineno, key=key)
        out[key] = _parse_value(key, raw, lineno)
    return out


def config_from_fields(fields: dict) -> ExperimentConfig:
    fields = dict(fields)
    preset = fields.pop("preset", None)
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}", key="preset")
    base = PRESETS[preset] if preset else ExperimentConfig()
    try:
        return base.replace(**fields)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    return config_from_fields(parse_config_text(Path(path).read_text()))


PRESETS = {
    # noiseless, i.i.d. standard normal patterns
    "iid-noiseless": ExperimentConfig(name="iid-noiseless", damping=0.9995, eps_stop=1e-4),
    # noiseless, MVN patterns with covariance Y^T Y + Delta, u = 1
    "mvn-noiseless": ExperimentConfig(name="mvn-noiseless", ensemble="mvn", u=1,
                                      damping=0.999, eps_stop=1e-4),
    # 5% flipped labels, student slab precision 1e4
    "iid-noisy-95": ExperimentConfig(name="iid-noisy-95", eta_true=0.95, damping=0.99,
                                     eps_stop=1e-6, slab_std=1e-2,
                                     alphas=(0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)),
    "mvn-noisy-90": ExperimentConfig(name="mvn-noisy-90", ensemble="mvn", eta_true=0.9,
                                     damping=0.99, eps_stop=1e-6, slab_std=1e-2),
    # recurrent network of diluted perceptrons
    "recnet-sync": ExperimentConfig(name="recnet-sync", ensemble="recurrent", update="sync",
                                    damping=0.999, eps_stop=1e-4),
    "recnet-hamming10": ExperimentConfig(name="recnet-hamming10", ensemble="recurrent",
                                         update="hamming", d_h=10, damping=0.999,
                                         eps_stop=1e-4),
}


def trial_rng(root_seed: int, alpha_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([root_seed, alpha_index, trial]))


def _recurrent_instance(cfg: ExperimentConfig, alpha_index: int, m: int, trial: int, rng):
    """Perceptron ``trial % N`` of network ``trial // N`` (one network per alpha and block)."""
    block, unit = divmod(trial, cfg.n)
    net_rng = np.random.default_rng(np.random.SeedSequence([cfg.root_seed, alpha_index,
                                                            10**6 + block]))
    net = sample_network(cfg.n, cfg.rho, net_rng, cfg.slab_std)
    states = glauber_states(net, m, net_rng, cfg.update, cfg.d_h)
    return perceptron_instance(net, states, unit, rng, cfg.eta_true,
                               {"update": cfg.update, "d_h": cfg.d_h, "network": block})


def run_trial(cfg: ExperimentConfig, alpha_index: int, trial: int) -> dict:
    """One (alpha, trial) cell: instance, EP (optionally learning), metrics."""
    alpha = cfg.alphas[alpha_index]
    rng = trial_rng(cfg.root_seed, alpha_index, trial)
    m = max(1, int(round(alpha * cfg.n)))
    rec = {c: "" for c in RECORD_COLUMNS}
    rec.update(alpha=alpha, trial=trial, seed=f"{cfg.root_seed}:{alpha_index}:{trial}")
    t0 = time.perf_counter()
    try:
        if cfg.ensemble == "recurrent":
            inst = _recurrent_instance(cfg, alpha_index, m, trial, rng)
        else:
            inst = make_instance(cfg.n, m, cfg.rho, rng, cfg.pattern_ensemble(), cfg.slab_std,
                                 cfg.eta_true)
        rho0 = float(rng.uniform(*cfg.rho0_range)) if cfg.rho_learn else cfg.rho
        eta0 = float(rng.uniform(*cfg.eta0_range)) if cfg.eta_learn else (
            cfg.eta_true if cfg.eta_prior is None else cfg.eta_prior)
        if cfg.eta_learn:
            eta0 = min(max(eta0, 0.5 + 1e-6), 1 - 1e-6)
        weight = SpikeSlab(rho0, cfg.student_lam)
        priors = PriorSet(weight, ThetaMixture(eta0)) if cfg.noisy else PriorSet(weight)
        x = inst.design
        if cfg.rho_learn or cfg.eta_learn:
            res = ep_run_learning(x, priors, cfg.ep_config(), learn_rho=cfg.rho_learn,
                                  learn_eta=cfg.eta_learn, lr_rho=cfg.lr_rho, lr_eta=cfg.lr_eta,
                                  record_every=100)
        else:
            res = ep_run(x, priors, cfg.ep_config())
        w = res.weights
        truth = inst.teacher != 0
        rec.update(n=inst.n, m=inst.m, converged=int(res.converged), iterations=res.iterations,
                   eps_final=repr(float(res.eps_final)), rho0=repr(rho0), eta0=repr(eta0),
                   rho_learned=repr(float(res.priors.weight.rho)),
                   eta_learned=repr(float(res.priors.eta)),
                   true_density=repr(float(truth.mean())))
        rec["mse_db"] = repr(normalized_mse_db(w, inst.teacher)) if np.any(w) else repr(0.0)
        if truth.any() and not truth.all():
            if cfg.score_mode in ("abs_weight", "both"):
                rec["auc_abs"] = repr(roc_and_auc(np.abs(w), truth).auc)
            if cfg.score_mode in ("p_nonzero", "both"):
                pw = res.priors.weight
                score = p_nonzero(res.cav_mean[: inst.n], res.cav_var[: inst.n], pw.rho, pw.lam)
                rec["auc_pnz"] = repr(roc_and_auc(score, truth).auc)
    except Exception as exc:  # recorded, never aborts the batch
        rec["converged"] = 0
        rec["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        log.debug("trial failed: %s", traceback.format_exc())
    rec["_wall_time"] = time.perf_counter() - t0
    return rec


def _worker_count(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return 1


def _mean_se(values) -> tuple:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return None, None, 0
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se, int(v.size)


def _num(rec, key):
    try:
        return float(rec[key])
    except (TypeError, ValueError):
        return None


def aggregate(cfg: ExperimentConfig, records: list) -> dict:
    """Mean and sigma / sqrt(count) per alpha, over converged trials and over all trials."""
    per_alpha = []
    for alpha in cfg.alphas:
        rows = [r for r in records if r["alpha"] == alpha]
        conv = [r for r in rows if int(r["converged"] or 0) == 1]
        entry = {"alpha": alpha, "n_trials": len(rows), "n_converged": len(conv),
                 "convergence_fraction": len(conv) / len(rows) if rows else None,
                 "n_errors": sum(1 for r in rows if r["error"])}
        for subset_name, subset in (("converged", conv), ("all", rows)):
            block = {}
            for key in ("mse_db", "auc_abs", "auc_pnz", "rho_learned", "eta_learned",
                        "iterations"):
                mean, se, count = _mean_se(_num(r, key) for r in subset)
                block[key] = {"mean": mean, "se": se, "count": count}
            entry[subset_name] = block
        per_alpha.append(entry)
    return {"config": cfg.to_dict(), "commit": _commit_hash(), "per_alpha": per_alpha}


def _commit_hash() -> Optional[str]:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or None if out.returncode == 0 else None
    except (OSError, subprocess.SubprocessError):
        return None


@dataclass
class ExperimentResult:
    records: list
    summary: dict
    wall_times: list = field(default_factory=list)

    def summary_for(self, alpha: float) -> dict:
        for entry in self.summary["per_alpha"]:
            if entry["alpha"] == float(alpha):
                return entry
        raise KeyError(alpha)


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_COLUMNS, lineterminator="\n",
                                extrasaction="ignore")
        writer.writeheader()
        for rec in records:
            writer.writerow(rec)


def read_records(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["alpha"] = float(r["alpha"])
        r["trial"] = int(r["trial"])
    return rows


def _run_cell(args):
    cfg, ai, trial = args
    return run_trial(cfg, ai, trial)


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                   out_dir=None, progress=None) -> ExperimentResult:
    """Run every (alpha, trial) cell; write records / timings / summary if ``out_dir`` is set."""
    cells = [(cfg, ai, t) for ai in range(len(cfg.alphas)) for t in range(cfg.n_trials)]
    nworkers = _worker_count(workers)
    if nworkers == 1:
        records = []
        for c in cells:
            records.append(_run_cell(c))
            if progress:
                progress(records[-1])
    else:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            records = list(pool.map(_run_cell, cells))
    records.sort(key=lambda r: (r["alpha"], r["trial"]))
    times = [(r["alpha"], r["trial"], r.pop("_wall_time")) for r in records]
    summary = aggregate(cfg, records)
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "records.csv", records)
        with open(out / "timings.csv", "w") as fh:
            fh.write("alpha,trial,wall_time\n")
            for a, t, w in times:
                fh.write(f"{a!r},{t},{w:.6f}\n")
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return ExperimentResult(records, summary, times)
