"""Exact site measures of the diluted perceptron posterior.

Weight sites carry a spike-and-slab prior, example (label) sites carry either a
hard sign-consistency constraint or its noisy two-sided mixture.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union


@dataclass(frozen=True)
class SpikeSlab:
    """(1 - rho) delta(w) + rho N(w; 0, 1/lam)."""

    rho: float
    lam: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.lam > 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")


@dataclass(frozen=True)
class Theta:
    """Heaviside constraint y >= 0 (noiseless labels)."""


@dataclass(frozen=True)
class ThetaMixture:
    """eta Theta(y) + (1 - eta) Theta(-y) (a fraction 1 - eta of flipped labels)."""

    eta: float

    def __post_init__(self):
        if not 0.5 <= self.eta <= 1.0:
            raise ValueError(
                f"eta must lie in [0.5, 1] (eta < 0.5 is the label-flipped mirror), got {self.eta}"
            )


SitePrior = Union[SpikeSlab, Theta, ThetaMixture]


@dataclass(frozen=True)
class PriorSet:
    """Block-homogeneous priors: one measure for all N weights, one for all M examples."""

    weight: SpikeSlab
    label: Union[Theta, ThetaMixture] = Theta()

    def with_rho(self, rho: float) -> "PriorSet":
        return replace(self, weight=replace(self.weight, rho=rho))

    def with_eta(self, eta: float) -> "PriorSet":
        return replace(self, label=ThetaMixture(eta))

    @property
    def eta(self) -> float:
        return self.label.eta if isinstance(self.label, ThetaMixture) else 1.0

    def to_dict(self) -> dict:
        label = {"kind": "theta"}
        if isinstance(self.label, ThetaMixture):
            label = {"kind": "theta_mixture", "eta": self.label.eta}
        return {"weight": {"kind": "spike_slab", "rho": self.weight.rho, "lam": self.weight.lam},
                "label": label}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSet":
        w = d["weight"]
        lab = d.get("label", {"kind": "theta"})
        label = ThetaMixture(lab["eta"]) if lab["kind"] == "theta_mixture" else Theta()
        return cls(SpikeSlab(w["rho"], w["lam"]), label)
