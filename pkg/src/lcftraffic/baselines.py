"""Reference estimators the learned model is compared against.

MFD assigns every link the network mean speed; MFD-P assigns each link its
sub-region's mean speed; a least-squares linear model maps the link
attributes plus the mean-speed history to a speed. The DNN / DNN-GRU / GAT
ablations are configurations of the estimator in :mod:`lcftraffic.model`.
An evaluation slot exists for external gradient-boosted models: anything
with the same predict surface can be plugged into the harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelConfig, config_from_name


def mfd_baseline(v_mean: float, n_links: int) -> np.ndarray:
    """Every link estimated at the network mean speed."""
    if v_mean < 0:
        raise ValueError("mean speed must be >= 0")
    return np.full(n_links, float(v_mean))


def region_mean_speeds(speeds: np.ndarray, accumulation: np.ndarray,
                       labels: np.ndarray, k: int,
                       weighting: str = "accumulation") -> np.ndarray:
    """Per-link estimate from each region's mean speed at one window.

    "accumulation" weights links by vehicles present (empty regions fall
    back to the arithmetic mean); "arithmetic" is the plain average, which
    carries the refinement guarantee against a global-mean predictor.
    """
    out = np.zeros_like(speeds)
    weights = np.maximum(np.asarray(accumulation, dtype=float), 0.0)
    for r in range(k):
        mask = labels == r
        if not np.any(mask):
            continue
        if weighting == "accumulation" and weights[mask].sum() > 1e-9:
            m = float(np.average(speeds[mask], weights=weights[mask]))
        else:
            m = float(speeds[mask].mean())
        out[mask] = m
    return out


def mfd_p_baseline(record, partition, window: int,
                   weighting: str = "accumulation") -> np.ndarray:
    labels = np.array([partition[lid] for lid in record.link_ids])
    return region_mean_speeds(record.speeds[window], record.accumulation[window],
                              labels, partition.params.k, weighting)


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float

    def predict(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias


def fit_lr(features: np.ndarray, targets: np.ndarray,
           ridge: float = 1e-8) -> LinearModel:
    """Ordinary least squares via normal equations, with a small ridge term
    for conditioning. The bias column is appended internally."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if x.shape[0] < x.shape[1]:
        raise ValueError("need at least as many samples as features")
    xb = np.column_stack([x, np.ones(len(x))])
    gram = xb.T @ xb + ridge * np.eye(xb.shape[1])
    try:
        coef = np.linalg.solve(gram, xb.T @ y)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"normal equations are singular: {exc}") from exc
    if not np.all(np.isfinite(coef)):
        raise ValueError("non-finite regression coefficients")
    return LinearModel(weights=coef[:-1], bias=float(coef[-1]))


def predict_lr(model: LinearModel, features: np.ndarray) -> np.ndarray:
    return model.predict(features)


def dnn_variants(name: str, **overrides) -> ModelConfig:
    """Ablation configurations by name: dnn, dnn-gru, gat, gat-gru and
    their '-p' partition-augmented variants."""
    return config_from_name(name, **overrides)
