"""Threshold-free OOD evaluation and feature-space geometry diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import NonFiniteError, ShapeError, ValidationError

# exact pairwise sums up to this many rows; beyond it, subsample pairs
MAX_EXACT_PAIR_ROWS = 20_000
SUBSAMPLED_PAIRS = 2_000_000
UNIT_NORM_TOL = 1e-3


def auroc(id_scores: np.ndarray, ood_scores: np.ndarray) -> float:
    """P(random ID score > random OOD score), ties counted half.

    Mann-Whitney rank-sum estimator: O(N log N), identical to brute-force
    pair counting.
    """
    a = np.asarray(id_scores, dtype=np.float64).ravel()
    b = np.asarray(ood_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValidationError("auroc: both score sets must be nonempty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteError("auroc: scores contain NaN or Inf")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def histogram(
    scores: np.ndarray, bins: int, value_range: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-width histogram; counts sum to N, last bin right-inclusive.

    A degenerate range (min == max) collapses to a single bin holding
    everything.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if bins < 1:
        raise ValidationError(f"histogram: bins must be >= 1, got {bins}")
    if scores.size == 0:
        raise ValidationError("histogram: empty score vector")
    lo, hi = value_range if value_range is not None else (scores.min(), scores.max())
    if lo == hi:
        return np.array([lo, hi]), np.array([scores.size])
    counts, edges = np.histogram(scores, bins=bins, range=(lo, hi))
    return edges, counts


def uniformity(features: np.ndarray, t: float = 2.0) -> float:
    """Log-mean Gaussian-kernel value over all ordered pairs (self included).

    log E[exp(-t * ||z_i - z_j||^2)] on L2-normalized rows; 0 when all rows
    coincide, more negative the more spread the features are.
    """
    z = _require_unit_rows("uniformity", features)
    if t <= 0:
        raise ValidationError(f"uniformity: t must be > 0, got {t}")
    n = z.shape[0]
    if n <= MAX_EXACT_PAIR_ROWS:
        # exact over all N^2 ordered pairs, accumulated in row blocks to keep
        # the Gram slices bounded in memory
        total = 0.0
        block = max(1, 2**22 // max(n, 1))
        for start in range(0, n, block):
            gram = z[start : start + block] @ z.T
            sq_dist = np.clip(2.0 - 2.0 * gram, 0.0, None)
            total += float(np.exp(-t * sq_dist).sum())
        return float(np.log(total / (n * n)))
    rng = np.random.default_rng(0)
    i = rng.integers(0, n, SUBSAMPLED_PAIRS)
    j = rng.integers(0, n, SUBSAMPLED_PAIRS)
    sq_dist = np.clip(2.0 - 2.0 * np.einsum("ij,ij->i", z[i], z[j]), 0.0, None)
    return float(np.log(np.mean(np.exp(-t * sq_dist))))


def tolerance(features: np.ndarray, labels: np.ndarray) -> float:
    """Mean cosine similarity over ordered same-label pairs (self included)."""
    z = _require_unit_rows("tolerance", features)
    if labels is None:
        raise ValidationError("tolerance: labels are required")
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != z.shape[0]:
        raise ShapeError(
            f"tolerance: {labels.shape[0]} labels for {z.shape[0]} feature rows"
        )
    # sum over same-class pairs of z_i . z_j == ||sum of class rows||^2
    total = 0.0
    pairs = 0
    for lab in np.unique(labels):
        rows = z[labels == lab]
        class_sum = rows.sum(axis=0)
        total += float(class_sum @ class_sum)
        pairs += rows.shape[0] ** 2
    return total / pairs


def _require_unit_rows(op: str, features: np.ndarray) -> np.ndarray:
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2:
        raise ShapeError(f"{op}: expected [N,D] features, got shape {z.shape}")
    if z.shape[0] == 0:
        raise ValidationError(f"{op}: empty feature matrix")
    norms = np.linalg.norm(z, axis=1)
    worst = float(np.abs(norms - 1.0).max())
    if worst > UNIT_NORM_TOL:
        raise ValidationError(
            f"{op}: rows must be L2-normalized (max |norm-1| = {worst:.3g})"
        )
    return z


@dataclass
class EvalReport:
    """AUROC plus paired score histograms for one ID/OOD comparison."""

    auroc: float
    n_id: int
    n_ood: int
    id_histogram: tuple[np.ndarray, np.ndarray]
    ood_histogram: tuple[np.ndarray, np.ndarray]
    method: str = "unknown"

    def to_dict(self) -> dict:
        return {
            "auroc": self.auroc,
            "n_id": self.n_id,
            "n_ood": self.n_ood,
            "method": self.method,
            "id_histogram": _hist_dict(self.id_histogram),
            "ood_histogram": _hist_dict(self.ood_histogram),
        }


def evaluate(
    id_scores: np.ndarray, ood_scores: np.ndarray, bins: int = 50, method: str = "unknown"
) -> EvalReport:
    """AUROC and histograms over a range shared by both score sets."""
    id_scores = np.asarray(id_scores, dtype=np.float64).ravel()
    ood_scores = np.asarray(ood_scores, dtype=np.float64).ravel()
    area = auroc(id_scores, ood_scores)
    pooled = np.concatenate([id_scores, ood_scores])
    shared = (float(pooled.min()), float(pooled.max()))
    return EvalReport(
        auroc=area,
        n_id=id_scores.size,
        n_ood=ood_scores.size,
        id_histogram=histogram(id_scores, bins, shared),
        ood_histogram=histogram(ood_scores, bins, shared),
        method=method,
    )


@dataclass
class GeometryReport:
    """Feature-sphere spread (uniformity) and class tightness (tolerance)."""

    uniformity: float
    negative_uniformity: float
    tolerance: float | None
    t: float
    n: int
    pairs: int = 0  # ordered pairs behind the uniformity value (n^2 when exact)
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "uniformity": self.uniformity,
            "negative_uniformity": self.negative_uniformity,
            "tolerance": self.tolerance,
            "t": self.t,
            "n": self.n,
            "pairs": self.pairs,
            "warning": self.warning,
        }


def geometry_report(
    features: np.ndarray, labels: np.ndarray | None, t: float = 2.0
) -> GeometryReport:
    u = uniformity(features, t)
    tol = None
    warning = None
    if labels is None:
        warning = "labels missing; tolerance not computed"
    else:
        tol = tolerance(features, labels)
    n = np.asarray(features).shape[0]
    return GeometryReport(
        uniformity=u,
        negative_uniformity=-u,
        tolerance=tol,
        t=t,
        n=n,
        pairs=n * n if n <= MAX_EXACT_PAIR_ROWS else SUBSAMPLED_PAIRS,
        warning=warning,
    )


def _hist_dict(hist: tuple[np.ndarray, np.ndarray]) -> dict:
    edges, counts = hist
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def write_histogram_csv(path: str | Path, hist: tuple[np.ndarray, np.ndarray]) -> None:
    """Plot-ready CSV: one row per bin (edge_low, edge_high, count)."""
    edges, counts = hist
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edge_low", "edge_high", "count"])
        for i, c in enumerate(counts):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(c)])


def write_report_json(path: str | Path, report: EvalReport | GeometryReport, extra: dict | None = None) -> None:
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
