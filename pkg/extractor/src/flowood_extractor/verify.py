"""Re-validate an exported feature directory against the interchange contract.

Checks raw NPY headers (version 1.0, little-endian descr, C order, rank),
cross-file shape consistency, finiteness, and the head identity
(logits == features @ head_weight.T + head_bias within 1e-3 max-abs).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib import format as npy_format

HEAD_IDENTITY_TOL = 1e-3

# file name -> (declared dtype, rank)
CONTRACT = {
    "features.npy": ("<f4", 2),
    "logits.npy": ("<f4", 2),
    "labels.npy": ("<i8", 1),
    "head_weight.npy": ("<f4", 2),
    "head_bias.npy": ("<f4", 1),
}
OPTIONAL = {"logits.npy", "labels.npy", "head_weight.npy", "head_bias.npy"}


@dataclass
class LayoutReport:
    directory: str
    violations: list[str] = field(default_factory=list)
    checked: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)

    def render(self) -> str:
        lines = [f"{self.directory}: {'OK' if self.ok else 'VIOLATIONS'}"]
        lines += [f"  checked {name}" for name in self.checked]
        lines += [f"  violation: {v}" for v in self.violations]
        return "\n".join(lines)


def _read_header(path: Path):
    """(shape, fortran_order, descr string) from the raw NPY header."""
    with open(path, "rb") as fh:
        version = npy_format.read_magic(fh)
        if version != (1, 0):
            raise ValueError(f"NPY version {version[0]}.{version[1]}, expected 1.0")
        shape, fortran_order, dtype = npy_format.read_array_header_1_0(fh)
    return shape, fortran_order, dtype.str


def verify_layout(directory: str | Path) -> LayoutReport:
    directory = Path(directory)
    report = LayoutReport(directory=str(directory))
    if not directory.is_dir():
        report.add("directory does not exist")
        return report

    headers: dict[str, tuple] = {}
    arrays: dict[str, np.ndarray] = {}
    for name, (descr, rank) in CONTRACT.items():
        path = directory / name
        if not path.exists():
            if name in OPTIONAL:
                continue
            report.add(f"{name}: missing (required)")
            continue
        try:
            shape, fortran_order, actual_descr = _read_header(path)
        except Exception as exc:
            report.add(f"{name}: unreadable header ({exc})")
            continue
        if actual_descr != descr:
            report.add(f"{name}: dtype {actual_descr}, expected {descr}")
        if fortran_order:
            report.add(f"{name}: fortran_order set, expected C order")
        if len(shape) != rank:
            report.add(f"{name}: rank {len(shape)}, expected {rank}")
        try:
            arr = np.load(path)
        except Exception as exc:
            report.add(f"{name}: failed to load payload ({exc})")
            continue
        if arr.shape != shape:
            report.add(f"{name}: payload shape {arr.shape} != header shape {shape}")
        if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
            report.add(f"{name}: contains NaN or Inf")
        headers[name] = (shape, fortran_order, actual_descr)
        arrays[name] = arr
        report.checked.append(name)

    feats = arrays.get("features.npy")
    if feats is None:
        return report
    n, d = feats.shape if feats.ndim == 2 else (len(feats), 0)

    logits = arrays.get("logits.npy")
    labels = arrays.get("labels.npy")
    weight = arrays.get("head_weight.npy")
    bias = arrays.get("head_bias.npy")

    if logits is not None and logits.shape[0] != n:
        report.add(f"logits.npy: {logits.shape[0]} rows, features.npy has {n}")
    if labels is not None and labels.shape[0] != n:
        report.add(f"labels.npy: {labels.shape[0]} entries, features.npy has {n} rows")
    if weight is not None:
        if weight.shape[1] != d:
            report.add(f"head_weight.npy: {weight.shape[1]} columns, features have D={d}")
        if bias is None:
            report.add("head_bias.npy: missing while head_weight.npy present")
        elif bias.shape[0] != weight.shape[0]:
            report.add(
                f"head_bias.npy: {bias.shape[0]} entries, head_weight has {weight.shape[0]} rows"
            )
        if logits is not None and logits.shape[1] != weight.shape[0]:
            report.add(
                f"logits.npy: {logits.shape[1]} classes, head_weight has {weight.shape[0]} rows"
            )

    if logits is not None and weight is not None and bias is not None and not report.violations:
        recomputed = feats.astype(np.float64) @ weight.T.astype(np.float64) + bias.astype(np.float64)
        deviation = float(np.abs(recomputed - logits.astype(np.float64)).max())
        if deviation > HEAD_IDENTITY_TOL:
            report.add(
                f"head identity: logits deviate from features @ head_weight.T + head_bias "
                f"by {deviation:.3g} (max allowed {HEAD_IDENTITY_TOL})"
            )
    return report
