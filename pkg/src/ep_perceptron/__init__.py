"""Expectation propagation for the diluted perceptron (1-bit compressed sensing)."""
from .core import DesignMatrix, EPConfig, EPResult, SiteParams, ep_run
from .datagen import PatternEnsemble, ProblemInstance, make_instance, recurrent_instances
from .finite_temp import FiniteTempConfig, ft_run
from .free_energy import HyperParams, ep_free_energy, ep_run_learning
from .harness import ExperimentConfig, PRESETS, run_experiment
from .metrics import normalized_mse_db, p_nonzero, roc_and_auc
from .priors import PriorSet, SpikeSlab, Theta, ThetaMixture

__all__ = [
    "DesignMatrix", "EPConfig", "EPResult", "SiteParams", "ep_run",
    "PatternEnsemble", "ProblemInstance", "make_instance", "recurrent_instances",
    "FiniteTempConfig", "ft_run", "HyperParams", "ep_free_energy", "ep_run_learning",
    "ExperimentConfig", "PRESETS", "run_experiment",
    "normalized_mse_db", "p_nonzero", "roc_and_auc",
    "PriorSet", "SpikeSlab", "Theta", "ThetaMixture",
]
