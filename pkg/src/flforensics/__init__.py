"""Tracing malicious clients in federated learning from checkpointed updates.

Typical use::

    from flforensics import default_config, run_experiment
    result = run_experiment(default_config(seed=0))
    result.metrics.dacc
"""
from .config import ExperimentConfig, default_config, load_config
from .detect import DetectionReport, classify_probe, detect_malicious, detect_single_score
from .experiment import compute_asr, compute_detection_metrics, recover_retrain, run_experiment
from .hdbscan import hdbscan
from .influence import InfluencePair, ProbeInput, influence_pairs, influence_scores

__all__ = [
    "DetectionReport",
    "ExperimentConfig",
    "InfluencePair",
    "ProbeInput",
    "classify_probe",
    "compute_asr",
    "compute_detection_metrics",
    "default_config",
    "detect_malicious",
    "detect_single_score",
    "hdbscan",
    "influence_pairs",
    "influence_scores",
    "load_config",
    "recover_retrain",
    "run_experiment",
]
__version__ = "0.1.0"
