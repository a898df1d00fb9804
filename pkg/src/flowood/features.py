"""Feature-set ingestion, L2 normalization, splitting, and synthetic data.

A feature directory is the interchange unit with whatever produced the
features (typically the extractor): ``features.npy`` (f32 [N,D]) plus
optional ``logits.npy`` (f32 [N,C]), ``labels.npy`` (i64 [N]),
``head_weight.npy`` (f32 [C,D]), ``head_bias.npy`` (f32 [C]) and a
``meta.json`` with provenance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFiniteError, ShapeError, ValidationError
from .npyio import read_npy, write_npy

FEATURES_FILE = "features.npy"
LOGITS_FILE = "logits.npy"
LABELS_FILE = "labels.npy"
HEAD_WEIGHT_FILE = "head_weight.npy"
HEAD_BIAS_FILE = "head_bias.npy"
META_FILE = "meta.json"

# extractor contract: stored logits must equal features @ head.T + bias this tightly
HEAD_IDENTITY_TOL = 1e-3


@dataclass
class FeatureSet:
    """N feature vectors with optional logits, labels, and classifier head."""

    features: np.ndarray
    logits: np.ndarray | None = None
    labels: np.ndarray | None = None
    head_weight: np.ndarray | None = None
    head_bias: np.ndarray | None = None
    source_name: str = ""

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "FeatureSet":
        f = self.features
        if f.ndim != 2:
            raise ShapeError(f"features: expected [N,D], got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise NonFiniteError("features: contain NaN or Inf")
        n, d = f.shape
        n_classes = None
        if self.logits is not None:
            if self.logits.ndim != 2 or self.logits.shape[0] != n:
                raise ShapeError(
                    f"logits shape {self.logits.shape} inconsistent with {n} feature rows"
                )
            if not np.all(np.isfinite(self.logits)):
                raise NonFiniteError("logits: contain NaN or Inf")
            n_classes = self.logits.shape[1]
        if self.head_weight is not None:
            if self.head_weight.ndim != 2 or self.head_weight.shape[1] != d:
                raise ShapeError(
                    f"head_weight shape {self.head_weight.shape} inconsistent with D={d}"
                )
            if n_classes is not None and self.head_weight.shape[0] != n_classes:
                raise ShapeError(
                    f"head_weight has {self.head_weight.shape[0]} rows but logits "
                    f"have {n_classes} classes"
                )
            n_classes = self.head_weight.shape[0]
            if self.head_bias is None:
                raise ValidationError("head_weight present but head_bias missing")
            if self.head_bias.shape != (n_classes,):
                raise ShapeError(
                    f"head_bias shape {self.head_bias.shape}, expected ({n_classes},)"
                )
        elif self.head_bias is not None:
            raise ValidationError("head_bias present but head_weight missing")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise ShapeError(f"labels shape {self.labels.shape}, expected ({n},)")
            if self.labels.size and self.labels.min() < 0:
                raise ValidationError("labels: negative class index")
            if n_classes is not None and self.labels.size and self.labels.max() >= n_classes:
                raise ValidationError(
                    f"labels reach {int(self.labels.max())} but there are {n_classes} classes"
                )
        if self.logits is not None and self.head_weight is not None:
            recomputed = (
                self.features.astype(np.float64) @ self.head_weight.T.astype(np.float64)
                + self.head_bias.astype(np.float64)
            )
            dev = float(np.abs(recomputed - self.logits.astype(np.float64)).max())
            if dev > HEAD_IDENTITY_TOL:
                raise ValidationError(
                    f"stored logits deviate from features @ head_weight.T + head_bias "
                    f"by {dev:.3g} (max allowed {HEAD_IDENTITY_TOL})"
                )
        return self


def load_feature_set(directory: str | Path) -> FeatureSet:
    """Load and validate a feature directory."""
    directory = Path(directory)
    feat_path = directory / FEATURES_FILE
    if not feat_path.exists():
        raise FileNotFoundError(f"{directory}: missing {FEATURES_FILE}")
    features = _require_dtype(feat_path, read_npy(feat_path), np.float32)
    n = features.shape[0]

    def optional(name: str, dtype: type) -> np.ndarray | None:
        path = directory / name
        if not path.exists():
            return None
        return _require_dtype(path, read_npy(path), dtype)

    logits = optional(LOGITS_FILE, np.float32)
    labels = optional(LABELS_FILE, np.int64)
    head_weight = optional(HEAD_WEIGHT_FILE, np.float32)
    head_bias = optional(HEAD_BIAS_FILE, np.float32)

    if logits is not None and logits.shape[0] != n:
        raise ShapeError(
            f"{LOGITS_FILE} has {logits.shape[0]} rows but {FEATURES_FILE} has {n}"
        )
    if labels is not None and labels.shape[0] != n:
        raise ShapeError(
            f"{LABELS_FILE} has {labels.shape[0]} entries but {FEATURES_FILE} has {n} rows"
        )

    source_name = directory.name
    meta_path = directory / META_FILE
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        source_name = meta.get("source_name", source_name)

    return FeatureSet(
        features=features,
        logits=logits,
        labels=labels,
        head_weight=head_weight,
        head_bias=head_bias,
        source_name=source_name,
    ).validate()


def save_feature_set(directory: str | Path, fs: FeatureSet, meta: dict | None = None) -> None:
    """Write a FeatureSet in the directory layout that load_feature_set reads."""
    fs.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_npy(directory / FEATURES_FILE, fs.features.astype(np.float32, copy=False))
    if fs.logits is not None:
        write_npy(directory / LOGITS_FILE, fs.logits.astype(np.float32, copy=False))
    if fs.labels is not None:
        write_npy(directory / LABELS_FILE, fs.labels.astype(np.int64, copy=False))
    if fs.head_weight is not None:
        write_npy(directory / HEAD_WEIGHT_FILE, fs.head_weight.astype(np.float32, copy=False))
        write_npy(directory / HEAD_BIAS_FILE, fs.head_bias.astype(np.float32, copy=False))
    payload = {"source_name": fs.source_name}
    if meta:
        payload.update(meta)
    (directory / META_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _require_dtype(path: Path, arr: np.ndarray, dtype: type) -> np.ndarray:
    if arr.dtype != np.dtype(dtype):
        raise ValidationError(f"{path}: expected dtype {np.dtype(dtype)}, got {arr.dtype}")
    return arr


def l2_normalize(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale every row to unit Euclidean norm; also return the original norms."""
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"l2_normalize: expected [N,D], got shape {features.shape}")
    norms = np.linalg.norm(features.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValidationError(f"l2_normalize: zero-norm row at index {int(zero[0])}")
    normalized = (features / norms[:, None]).astype(features.dtype)
    return normalized, norms


@dataclass
class SyntheticSpec:
    """Clustered-hypersphere generator settings.

    ID and OOD cluster centers are independent uniform draws on the unit
    sphere; each sample is its center plus isotropic noise of scale
    ``cluster_spread``, rescaled to a magnitude drawn from
    N(norm_mean, norm_std^2) (absolute value, floored at 1e-3, so magnitudes
    stay positive). Labels are cluster indices.
    """

    dim: int = 64
    id_clusters: int = 10
    ood_clusters: int = 5
    samples_per_cluster: int = 500
    cluster_spread: float = 0.05
    norm_mean: float = 10.0
    norm_std: float = 1.0
    seed: int = 0
    val_fraction: float = 0.1

    def validate(self) -> "SyntheticSpec":
        if self.dim < 2:
            raise ValidationError(f"dim must be >= 2, got {self.dim}")
        if min(self.id_clusters, self.ood_clusters, self.samples_per_cluster) < 1:
            raise ValidationError("cluster counts and samples_per_cluster must be >= 1")
        if self.cluster_spread < 0 or self.norm_std < 0:
            raise ValidationError("cluster_spread and norm_std must be >= 0")
        if self.norm_mean <= 0:
            raise ValidationError("norm_mean must be > 0")
        if not 0 < self.val_fraction < 1:
            raise ValidationError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        return self


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureSet, FeatureSet, FeatureSet]:
    """Generate (id_train, id_val, ood) feature sets, deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    centers = rng.standard_normal((spec.id_clusters + spec.ood_clusters, spec.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    id_centers = centers[: spec.id_clusters]
    ood_centers = centers[spec.id_clusters :]

    def sample_clusters(cluster_centers: np.ndarray, name: str) -> FeatureSet:
        rows, labels = [], []
        for k, center in enumerate(cluster_centers):
            pts = center + spec.cluster_spread * rng.standard_normal(
                (spec.samples_per_cluster, spec.dim)
            )
            mags = np.abs(rng.normal(spec.norm_mean, spec.norm_std, spec.samples_per_cluster))
            mags = np.maximum(mags, 1e-3)
            pts *= (mags / np.linalg.norm(pts, axis=1))[:, None]
            rows.append(pts)
            labels.append(np.full(spec.samples_per_cluster, k, dtype=np.int64))
        return FeatureSet(
            features=np.concatenate(rows).astype(np.float32),
            labels=np.concatenate(labels),
            source_name=name,
        ).validate()

    id_all = sample_clusters(id_centers, "synthetic-id")
    ood = sample_clusters(ood_centers, "synthetic-ood")
    id_train, id_val = split(id_all, 1.0 - spec.val_fraction, seed=spec.seed)
    id_train.source_name = "synthetic-id-train"
    id_val.source_name = "synthetic-id-val"
    return id_train, id_val, ood


def split(fs: FeatureSet, fraction: float, seed: int) -> tuple[FeatureSet, FeatureSet]:
    """Disjoint row partition with ``fraction`` of rows in the first part."""
    if not 0 < fraction < 1:
        raise ValidationError(f"split fraction must be in (0,1), got {fraction}")
    n = fs.n
    n_a = int(round(fraction * n))
    if n_a == 0 or n_a == n:
        raise ValidationError(
            f"split of {n} rows at fraction {fraction} leaves an empty side"
        )
    order = np.random.default_rng(seed).permutation(n)
    idx_a, idx_b = np.sort(order[:n_a]), np.sort(order[n_a:])

    def take(idx: np.ndarray, suffix: str) -> FeatureSet:
        return FeatureSet(
            features=fs.features[idx],
            logits=None if fs.logits is None else fs.logits[idx],
            labels=None if fs.labels is None else fs.labels[idx],
            head_weight=fs.head_weight,
            head_bias=fs.head_bias,
            source_name=f"{fs.source_name}{suffix}" if fs.source_name else "",
        )

    return take(idx_a, "/a"), take(idx_b, "/b")
