"""Teacher-student instance generation.

Teachers are diluted Gaussian perceptrons. Patterns come from one of three
ensembles: i.i.d. standard normal, a zero-mean multivariate normal with a
low-rank-plus-diagonal covariance, or the zero-temperature Glauber dynamics of
a recurrent network of diluted perceptrons.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import DesignMatrix, cholesky_lower


def sign(z):
    """Elementwise sign with sign(0) = +1."""
    return np.where(np.asarray(z) >= 0, 1.0, -1.0)


@dataclass(frozen=True)
class TeacherSpec:
    n: int
    rho: float
    slab_std: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("teacher needs at least one weight")
        if not 0 < self.rho <= 1:
            raise ValueError(f"teacher density must lie in (0, 1], got {self.rho}")
        if not self.slab_std > 0:
            raise ValueError("slab_std must be positive")


@dataclass(frozen=True)
class PatternEnsemble:
    """kind: 'iid', 'mvn' (rank parameter u) or 'recurrent'.

    Recurrent update modes: 'sync' (parallel update, every state stored),
    'sweep' (asynchronous, store after each sweep of N updates) and 'hamming'
    (asynchronous, store when the state is exactly ``d_h`` flips away from the
    last stored one).
    """

    kind: str = "iid"
    u: int = 1
    update: str = "sync"
    d_h: int = 10

    def __post_init__(self):
        if self.kind not in ("iid", "mvn", "recurrent"):
            raise ValueError(f"unknown pattern ensemble {self.kind!r}")
        if self.kind == "mvn" and self.u < 1:
            raise ValueError("mvn rank parameter u must be >= 1")
        if self.kind == "recurrent" and self.update not in ("sync", "sweep", "hamming"):
            raise ValueError(f"unknown recurrent update {self.update!r}")
        if self.kind == "recurrent" and self.update == "hamming" and self.d_h < 1:
            raise ValueError("hamming distance must be >= 1")


@dataclass(frozen=True)
class LabelNoiseSpec:
    eta: float = 1.0

    def __post_init__(self):
        if not 0.5 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0.5, 1], got {self.eta}")

    def flip_count(self, m: int) -> int:
        return int(round((1.0 - self.eta) * m))


class HammingBudgetError(RuntimeError):
    pass


def sample_teacher(spec: TeacherSpec, rng) -> np.ndarray:
    """Spike-and-slab teacher; an all-zero draw is resampled."""
    while True:
        support = rng.random(spec.n) < spec.rho
        if support.any():
            break
    return np.where(support, rng.standard_normal(spec.n) * spec.slab_std, 0.0)


def mvn_covariance(n: int, u: int, rng) -> np.ndarray:
    """S = Y^T Y + Delta, Y (u x n) standard normal, Delta = diag(|xi|)."""
    y = rng.standard_normal((u, n))
    delta = np.abs(rng.standard_normal(n))
    return y.T @ y + np.diag(delta)


@dataclass
class RecurrentNetwork:
    """N diluted perceptrons without self-loops; row i of ``w`` has a zero diagonal."""

    w: np.ndarray

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def incoming(self, i: int) -> np.ndarray:
        return np.delete(self.w[i], i)


def sample_network(n: int, rho: float, rng, slab_std: float = 1.0) -> RecurrentNetwork:
    w = np.zeros((n, n))
    spec = TeacherSpec(n - 1, rho, slab_std)
    for i in range(n):
        w[i, np.arange(n) != i] = sample_teacher(spec, rng)
    return RecurrentNetwork(w)


def glauber_states(net: RecurrentNetwork, m: int, rng, update: str = "sync", d_h: int = 10,
                   x0: Optional[np.ndarray] = None, max_steps: Optional[int] = None) -> np.ndarray:
    """Zero-temperature Glauber trajectory of ``net``; returns M stored +-1 states."""
    n = net.n
    if update == "hamming" and not 1 <= d_h <= n:
        raise ValueError(f"hamming distance must lie in [1, {n}], got {d_h}")
    x = sign(rng.standard_normal(n)) if x0 is None else np.asarray(x0, dtype=float).copy()
    out = np.empty((m, n))
    out[0] = x
    if update == "sync":
        for t in range(1, m):
            x = sign(net.w @ x)
            out[t] = x
        return out

    if max_steps is None:
        max_steps = 1000 * n * m
    steps = 0
    last = x.copy()
    dist = 0
    t = 1
    while t < m:
        if update == "sweep":
            for i in rng.permutation(n):
                x[i] = sign(net.w[i] @ x)
            steps += n
            out[t] = x
            t += 1
        else:
            i = rng.integers(n)
            new = sign(net.w[i] @ x)
            if new != x[i]:
                dist += 1 if x[i] == last[i] else -1
                x[i] = new
            steps += 1
            if dist == d_h:
                out[t] = x
                last = x.copy()
                dist = 0
                t += 1
        if steps > max_steps:
            raise HammingBudgetError(
                f"stored {t} of {m} states within the step budget of {max_steps} updates")
    return out


def gen_patterns(ens: PatternEnsemble, n: int, m: int, rng,
                 network: Optional[RecurrentNetwork] = None) -> np.ndarray:
    """M x N pattern matrix from the requested ensemble."""
    if m < 0:
        raise ValueError("pattern count must be non-negative")
    if ens.kind == "iid":
        return rng.standard_normal((m, n))
    if ens.kind == "mvn":
        s = mvn_covariance(n, ens.u, rng)
        chol = cholesky_lower(s)
        return rng.standard_normal((m, n)) @ chol.T
    if network is None:
        raise ValueError("recurrent patterns need a teacher network")
    return glauber_states(network, m, rng, ens.update, ens.d_h)


def label(patterns, teacher) -> tuple[np.ndarray, DesignMatrix]:
    """Teacher labels sign(B . x) and the signed design matrix."""
    teacher = np.asarray(teacher, dtype=float)
    if not np.any(teacher):
        raise ValueError("teacher weights are all zero")
    patterns = np.atleast_2d(np.asarray(patterns, dtype=float))
    sigma = sign(patterns @ teacher)
    return sigma, DesignMatrix.from_patterns(patterns, sigma)


def flip_labels(sigma, spec: LabelNoiseSpec, rng) -> tuple[np.ndarray, np.ndarray]:
    """Negate exactly round((1 - eta) M) labels chosen without replacement."""
    sigma = np.asarray(sigma, dtype=float)
    k = spec.flip_count(sigma.size)
    mask = np.zeros(sigma.size, dtype=bool)
    mask[rng.choice(sigma.size, size=k, replace=False)] = True
    return np.where(mask, -sigma, sigma), mask


@dataclass
class ProblemInstance:
    teacher: np.ndarray
    patterns: np.ndarray
    labels: np.ndarray
    flipped: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.patterns.shape[1]

    @property
    def m(self) -> int:
        return self.patterns.shape[0]

    @property
    def design(self) -> DesignMatrix:
        return DesignMatrix.from_patterns(self.patterns, self.labels)

    def to_dict(self) -> dict:
        return {
            "format": "ep-perceptron-instance/1",
            "n": self.n,
            "m": self.m,
            "teacher": self.teacher.tolist(),
            "patterns": self.patterns.tolist(),
            "labels": self.labels.astype(int).tolist(),
            "flipped": self.flipped.astype(int).tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        n = d["n"]
        patterns = np.asarray(d["patterns"], dtype=float).reshape(d["m"], n)
        return cls(np.asarray(d["teacher"], dtype=float), patterns,
                   np.asarray(d["labels"], dtype=float), np.asarray(d["flipped"], dtype=bool),
                   d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_instance(n: int, m: int, rho: float, rng, ensemble: PatternEnsemble = PatternEnsemble(),
                  slab_std: float = 1.0, eta: float = 1.0, meta: Optional[dict] = None
                  ) -> ProblemInstance:
    """Teacher, patterns, (possibly corrupted) labels for the iid / mvn ensembles.

    For the recurrent ensemble use :func:`recurrent_instances`.
    """
    if ensemble.kind == "recurrent":
        raise ValueError("use recurrent_instances for network-generated patterns")
    teacher = sample_teacher(TeacherSpec(n, rho, slab_std), rng)
    patterns = gen_patterns(ensemble, n, m, rng)
    sigma, _ = label(patterns, teacher)
    noisy, mask = flip_labels(sigma, LabelNoiseSpec(eta), rng)
    info = {"ensemble": ensemble.kind, "u": ensemble.u, "rho": rho, "slab_std": slab_std,
            "eta": eta}
    info.update(meta or {})
    return ProblemInstance(teacher, patterns, noisy, mask, info)


def perceptron_instance(net: RecurrentNetwork, states: np.ndarray, i: int, rng=None,
                        eta: float = 1.0, meta: Optional[dict] = None) -> ProblemInstance:
    """Training set of perceptron ``i``: the other N-1 units as inputs, its teacher output as label."""
    teacher = net.incoming(i)
    patterns = np.delete(states, i, axis=1)
    sigma, _ = label(patterns, teacher)
    mask = np.zeros(sigma.size, dtype=bool)
    if eta < 1.0:
        sigma, mask = flip_labels(sigma, LabelNoiseSpec(eta), rng)
    info = {"ensemble": "recurrent", "unit": i, "eta": eta}
    info.update(meta or {})
    return ProblemInstance(teacher, patterns, sigma, mask, info)


def recurrent_instances(n: int, m: int, rho: float, rng, update: str = "sync", d_h: int = 10,
                        units=None, slab_std: float = 1.0, eta: float = 1.0):
    """Sample a teacher network, run its dynamics and build one instance per unit."""
    net = sample_network(n, rho, rng, slab_std)
    states = glauber_states(net, m, rng, update, d_h)
    units = range(n) if units is None else units
    meta = {"update": update, "d_h": d_h, "rho": rho, "slab_std": slab_std}
    return [perceptron_instance(net, states, i, rng, eta, meta) for i in units]
