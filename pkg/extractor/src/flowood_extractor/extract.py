"""Run a frozen classifier over a dataset and export the feature directory.

The output layout is the NPY interchange the density-estimation side reads:
features.npy (f32 [N,D], penultimate activations), logits.npy (f32 [N,C]),
labels.npy (i64 [N]), head_weight.npy (f32 [C,D]), head_bias.npy (f32 [C]),
meta.json. Everything is little-endian C-order NPY v1.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torchvision import datasets, models, transforms

EXPECTED_FEATURE_DIM = {"resnet18": 512, "resnet50": 2048, "swin_t": 768}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)

HEAD_IDENTITY_TOL = 1e-3


class ExtractionError(RuntimeError):
    pass


@dataclass
class ExtractionJob:
    """One export: which backbone over which dataset split, to which directory."""

    backbone: str
    dataset: str
    out_dir: str
    split: str = "val"
    augment: bool = False
    batch_size: int = 64
    device: str = "cpu"
    weights: str | None = None  # None = random init, "pretrained", or a state-dict path
    data_root: str = "data"
    limit: int | None = None
    seed: int = 0


def build_backbone(job: ExtractionJob) -> tuple[nn.Module, nn.Linear]:
    """Return (trunk emitting penultimate features, final linear head)."""
    name = job.backbone
    if name not in EXPECTED_FEATURE_DIM:
        raise ExtractionError(
            f"unknown backbone {name!r}; supported: {sorted(EXPECTED_FEATURE_DIM)}"
        )
    pretrained = job.weights == "pretrained"
    if name == "resnet18":
        model = models.resnet18(weights=models.ResNet18_Weights.DEFAULT if pretrained else None)
        head, model.fc = model.fc, nn.Identity()
    elif name == "resnet50":
        model = models.resnet50(weights=models.ResNet50_Weights.DEFAULT if pretrained else None)
        head, model.fc = model.fc, nn.Identity()
    else:
        model = models.swin_t(weights=models.Swin_T_Weights.DEFAULT if pretrained else None)
        head, model.head = model.head, nn.Identity()
    if job.weights and job.weights != "pretrained":
        state = torch.load(job.weights, map_location="cpu", weights_only=True)
        missing, unexpected = model.load_state_dict(state, strict=False)
        if unexpected:
            raise ExtractionError(f"checkpoint has unexpected keys: {sorted(unexpected)[:5]}")
    model.eval()
    head.eval()
    for p in list(model.parameters()) + list(head.parameters()):
        p.requires_grad_(False)
    return model.to(job.device), head.to(job.device)


def build_dataset(job: ExtractionJob):
    augment = job.augment
    if job.dataset == "cifar10":
        tf = _cifar_transform(augment)
        return datasets.CIFAR10(job.data_root, train=job.split == "train", transform=tf, download=True)
    if job.dataset == "fake":
        # deterministic synthetic images; handy for layout and plumbing checks
        return datasets.FakeData(
            size=job.limit or 128,
            image_size=(3, 224, 224),
            num_classes=10,
            transform=_imagenet_transform(augment),
            random_offset=job.seed,
        )
    if job.dataset == "imagefolder":
        root = Path(job.data_root) / job.split
        if not root.is_dir():
            raise ExtractionError(f"imagefolder split directory not found: {root}")
        return datasets.ImageFolder(root, transform=_imagenet_transform(augment))
    raise ExtractionError(f"unknown dataset {job.dataset!r}; supported: cifar10, fake, imagefolder")


def _imagenet_transform(augment: bool):
    normalize = transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD)
    if augment:
        return transforms.Compose([
            transforms.RandomResizedCrop(224),
            transforms.RandomHorizontalFlip(),
            transforms.ToTensor(),
            normalize,
        ])
    return transforms.Compose([
        transforms.Resize(256),
        transforms.CenterCrop(224),
        transforms.ToTensor(),
        normalize,
    ])


def _cifar_transform(augment: bool):
    normalize = transforms.Normalize(CIFAR_MEAN, CIFAR_STD)
    if augment:
        return transforms.Compose([
            transforms.RandomCrop(32, padding=4),
            transforms.RandomHorizontalFlip(),
            transforms.ToTensor(),
            normalize,
        ])
    return transforms.Compose([transforms.ToTensor(), normalize])


def _batches(job: ExtractionJob):
    dataset = build_dataset(job)
    loader = torch.utils.data.DataLoader(
        dataset, batch_size=job.batch_size, shuffle=False, num_workers=0
    )
    seen = 0
    for images, labels in loader:
        if job.limit is not None and seen >= job.limit:
            break
        if job.limit is not None and seen + images.shape[0] > job.limit:
            images = images[: job.limit - seen]
            labels = labels[: job.limit - seen]
        seen += images.shape[0]
        yield images.to(job.device), labels


def extract(job: ExtractionJob) -> Path:
    """Export the feature directory; returns its path."""
    torch.manual_seed(job.seed)  # fixes random-init weights and augmentation draws
    trunk, head = build_backbone(job)
    feats_parts, logits_parts, label_parts = [], [], []
    with torch.no_grad():
        for images, labels in _batches(job):
            feats = trunk(images)
            if feats.ndim != 2:
                raise ExtractionError(
                    f"trunk produced shape {tuple(feats.shape)}, expected [B,D]"
                )
            logits_parts.append(head(feats).cpu().numpy())
            feats_parts.append(feats.cpu().numpy())
            label_parts.append(labels.numpy())
    if not feats_parts:
        raise ExtractionError("dataset produced no samples")

    features = np.concatenate(feats_parts).astype(np.float32)
    logits = np.concatenate(logits_parts).astype(np.float32)
    labels = np.concatenate(label_parts).astype(np.int64)
    head_weight = head.weight.detach().cpu().numpy().astype(np.float32)
    head_bias = head.bias.detach().cpu().numpy().astype(np.float32)

    expected_dim = EXPECTED_FEATURE_DIM[job.backbone]
    if features.shape[1] != expected_dim:
        raise ExtractionError(
            f"{job.backbone} produced D={features.shape[1]}, expected {expected_dim}"
        )
    recomputed = features.astype(np.float64) @ head_weight.T.astype(np.float64) + head_bias
    deviation = float(np.abs(recomputed - logits).max())
    if deviation > HEAD_IDENTITY_TOL:
        raise ExtractionError(
            f"logits disagree with features through the head by {deviation:.3g}"
        )

    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "features.npy", features)
    np.save(out / "logits.npy", logits)
    np.save(out / "labels.npy", labels)
    np.save(out / "head_weight.npy", head_weight)
    np.save(out / "head_bias.npy", head_bias)
    meta = {
        "source_name": f"{job.dataset}-{job.split}-{job.backbone}",
        "backbone": job.backbone,
        "dataset": job.dataset,
        "split": job.split,
        "augment": job.augment,
        "n": int(features.shape[0]),
        "d": int(features.shape[1]),
        "c": int(logits.shape[1]),
        "weights": job.weights,
        "seed": job.seed,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def extract_odin_scores(
    job: ExtractionJob,
    temperature: float = 1000.0,
    perturbation: float = 0.0014,
    out_file: str | None = None,
) -> Path:
    """ODIN scores: temperature-scaled max softmax after an input-gradient nudge.

    Each input is moved ``perturbation`` against the gradient of the scaled
    NLL of its predicted class, which needs pixel gradients of the backbone,
    hence this lives next to the extractor. With perturbation 0 and
    temperature 1 this reduces to the max softmax probability. Scores are
    oriented higher = more in-distribution.
    """
    if temperature <= 0:
        raise ExtractionError(f"temperature must be > 0, got {temperature}")
    if perturbation < 0:
        raise ExtractionError(f"perturbation must be >= 0, got {perturbation}")
    torch.manual_seed(job.seed)
    trunk, head = build_backbone(job)
    scores = []
    for images, _ in _batches(job):
        if perturbation > 0:
            images = images.clone().requires_grad_(True)
            logits = head(trunk(images)) / temperature
            target = logits.argmax(dim=1)
            loss = F.cross_entropy(logits, target)
            (grad,) = torch.autograd.grad(loss, images)
            images = (images - perturbation * grad.sign()).detach()
        with torch.no_grad():
            logits = head(trunk(images)) / temperature
            scores.append(F.softmax(logits, dim=1).max(dim=1).values.cpu().numpy())
    if not scores:
        raise ExtractionError("dataset produced no samples")
    values = np.concatenate(scores).astype(np.float64)
    out = Path(out_file) if out_file else Path(job.out_dir) / "odin_scores.npy"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, values)
    sidecar = {
        "method": "odin",
        "params": {"temperature": temperature, "perturbation": perturbation},
        "backbone": job.backbone,
        "dataset": job.dataset,
        "split": job.split,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out
