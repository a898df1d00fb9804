"""Per-sample OOD scores. Convention: higher score = more in-distribution.

The flow likelihood score (fde) comes from a trained FlowModel; the
classification baselines (msp, energy, react) need only logits or the
stored linear head, so they run without the backbone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .features import FeatureSet, l2_normalize
from .flow import FlowModel

METHOD_FDE = "fde"
METHOD_MSP = "msp"
METHOD_ENERGY = "energy"
METHOD_REACT = "react_energy"


@dataclass
class ScoreVector:
    values: np.ndarray  # float64 [N]
    method: str
    params: dict = field(default_factory=dict)


def fde_score(model: FlowModel, fs: FeatureSet, normalize: bool) -> ScoreVector:
    """Flow log-likelihood of the (optionally L2-normalized) features.

    The flag must match how the model was trained; mixing normalized and
    unnormalized feature spaces silently wrecks the scores, so it is a hard
    error.
    """
    if normalize != model.normalized:
        trained = "normalized" if model.normalized else "unnormalized"
        asked = "normalized" if normalize else "unnormalized"
        raise ValidationError(
            f"normalization mismatch: model was trained on {trained} features "
            f"but scoring was requested on {asked} features"
        )
    feats = fs.features
    if feats.shape[1] != model.dim:
        raise ShapeError(f"features have D={feats.shape[1]} but model has D={model.dim}")
    if normalize:
        feats, _ = l2_normalize(feats)
    return ScoreVector(
        values=model.log_prob(feats),
        method=METHOD_FDE,
        params={"normalize": normalize},
    )


def msp_score(logits: np.ndarray) -> ScoreVector:
    """Maximum softmax probability, computed with max-subtraction."""
    logits = _check_logits(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return ScoreVector(values=probs.max(axis=1), method=METHOD_MSP)


def energy_score(logits: np.ndarray, temperature: float = 1.0) -> ScoreVector:
    """Negative free energy of the logits, T * logsumexp(logits / T)."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be > 0, got {temperature}")
    logits = _check_logits(logits, min_classes=1)
    scaled = logits / temperature
    peak = scaled.max(axis=1, keepdims=True)
    lse = peak[:, 0] + np.log(np.exp(scaled - peak).sum(axis=1))
    return ScoreVector(
        values=temperature * lse,
        method=METHOD_ENERGY,
        params={"temperature": temperature},
    )


def react_energy_score(
    fs: FeatureSet, clip_threshold: float, temperature: float = 1.0
) -> ScoreVector:
    """Energy score after clipping feature activations at ``clip_threshold``.

    Logits are recomputed through the stored linear head, so this runs
    post hoc from the exported features alone.
    """
    if fs.head_weight is None or fs.head_bias is None:
        raise ValidationError("react score needs head_weight and head_bias in the feature set")
    if np.isnan(clip_threshold):
        raise ValidationError("clip_threshold must not be NaN")
    clipped = np.minimum(fs.features.astype(np.float64), clip_threshold)
    logits = clipped @ fs.head_weight.T.astype(np.float64) + fs.head_bias.astype(np.float64)
    inner = energy_score(logits, temperature)
    return ScoreVector(
        values=inner.values,
        method=METHOD_REACT,
        params={"clip_threshold": float(clip_threshold), "temperature": temperature},
    )


def fit_react_threshold(id_features: np.ndarray, percentile: float = 90.0) -> float:
    """Percentile of all pooled ID activations (linear interpolation)."""
    if not 0 < percentile < 100:
        raise ValidationError(f"percentile must be in (0, 100), got {percentile}")
    pooled = np.asarray(id_features, dtype=np.float64).ravel()
    if pooled.size == 0:
        raise ValidationError("fit_react_threshold: empty feature matrix")
    return float(np.percentile(pooled, percentile))


def _check_logits(logits: np.ndarray, min_classes: int = 2) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < min_classes:
        raise ShapeError(
            f"expected [N,C] logits with C >= {min_classes}, got shape {logits.shape}"
        )
    return logits
