"""Synthetic labeled datasets: low-dimensional mode mixtures.

Every generator returns unit-scale data (per-dimension std exactly 1 after
normalization) with labels = mode indices, split 90/10 into train/held-out.
Datasets are written with the flat tensor format plus a JSON meta file, so
identical spec + seed produces byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import serialize

__all__ = ["DatasetSpec", "generate_dataset", "save_dataset", "load_dataset", "make_points"]

KINDS = ("ring_mixture", "grid_mixture", "checkerboard", "spiral", "tiny_raster")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "ring_mixture"
    n_modes: int = 8
    n_points: int = 10000
    noise_std: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}; options: {KINDS}")
        if self.n_points < 100:
            raise ValueError("need at least 100 points")
        if self.n_modes < 2:
            raise ValueError("need at least 2 modes")


def _ring(spec: DatasetSpec, rng):
    labels = rng.integers(0, spec.n_modes, size=spec.n_points)
    ang = 2.0 * np.pi * labels / spec.n_modes
    centers = np.stack([np.cos(ang), np.sin(ang)], axis=1) * 2.0
    return centers + rng.normal(scale=spec.noise_std, size=(spec.n_points, 2)), labels


def _grid(spec: DatasetSpec, rng):
    side = int(np.ceil(np.sqrt(spec.n_modes)))
    labels = rng.integers(0, spec.n_modes, size=spec.n_points)
    gx, gy = labels % side, labels // side
    centers = np.stack([gx, gy], axis=1) * (4.0 / max(side - 1, 1)) - 2.0
    return centers + rng.normal(scale=spec.noise_std, size=(spec.n_points, 2)), labels


def _checkerboard(spec: DatasetSpec, rng):
    # Mode = one occupied square of an alternating board wide enough for n_modes.
    side = int(np.ceil(np.sqrt(2 * spec.n_modes)))
    squares = [(i, j) for i in range(side) for j in range(side) if (i + j) % 2 == 0]
    squares = np.asarray(squares[: spec.n_modes])
    labels = rng.integers(0, spec.n_modes, size=spec.n_points)
    base = squares[labels] * (4.0 / side) - 2.0
    return base + rng.uniform(0, 4.0 / side, size=(spec.n_points, 2)), labels


def _spiral(spec: DatasetSpec, rng):
    labels = rng.integers(0, spec.n_modes, size=spec.n_points)
    t = rng.uniform(0.3, 1.0, size=spec.n_points)
    ang = t * 3.0 * np.pi + 2.0 * np.pi * labels / spec.n_modes
    pts = np.stack([np.cos(ang), np.sin(ang)], axis=1) * (2.0 * t)[:, None]
    return pts + rng.normal(scale=spec.noise_std, size=(spec.n_points, 2)), labels


def _tiny_raster(spec: DatasetSpec, rng):
    # 4x4 binary glyph prototypes, one per mode, flattened to 16-D.
    protos = (rng.random(size=(spec.n_modes, 16)) > 0.5).astype(np.float64)
    labels = rng.integers(0, spec.n_modes, size=spec.n_points)
    return protos[labels] + rng.normal(scale=spec.noise_std, size=(spec.n_points, 16)), labels


_GENERATORS = {
    "ring_mixture": _ring,
    "grid_mixture": _grid,
    "checkerboard": _checkerboard,
    "spiral": _spiral,
    "tiny_raster": _tiny_raster,
}


def make_points(spec: DatasetSpec, seed: int):
    """Generate normalized points and labels (no disk I/O)."""
    rng = np.random.default_rng(seed)
    points, labels = _GENERATORS[spec.kind](spec, rng)
    points = points - points.mean(axis=0)
    points = points / points.std(axis=0)
    return points, labels.astype(np.int64)


def generate_dataset(spec: DatasetSpec, seed: int, out_dir) -> Path:
    """Generate, split 90/10, and persist a dataset directory."""
    points, labels = make_points(spec, seed)
    n = len(points)
    rng = np.random.default_rng(seed + 1)
    order = rng.permutation(n)
    cut = int(0.9 * n)
    train_idx, held_idx = order[:cut], order[cut:]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "data.bin"
    serialize.save_tensors(
        path,
        {
            "train_points": points[train_idx],
            "train_labels": labels[train_idx].astype(np.float64),
            "held_points": points[held_idx],
            "held_labels": labels[held_idx].astype(np.float64),
        },
    )
    meta = {
        "spec": asdict(spec),
        "seed": seed,
        "n_classes": int(spec.n_modes),
        "data_dim": int(points.shape[1]),
        "n_train": int(cut),
        "n_held": int(n - cut),
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> dict:
    """Load a dataset directory (or its data.bin path)."""
    path = Path(path)
    if path.is_dir():
        path = path / "data.bin"
    tensors = serialize.load_tensors(path)
    meta = json.loads((path.parent / "meta.json").read_text())
    return {
        "train_points": tensors["train_points"],
        "train_labels": tensors["train_labels"].astype(np.int64),
        "held_points": tensors["held_points"],
        "held_labels": tensors["held_labels"].astype(np.int64),
        "n_classes": meta["n_classes"],
        "data_dim": meta["data_dim"],
        "meta": meta,
    }
