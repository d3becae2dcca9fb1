"""Synthetic datasets and declared-input-uncertainty augmentation.

Two generators: the interleaving half-circles ("two moons") classification
set, and a 1-D regression curve ``x sin(x)`` with homoscedastic plus
heteroscedastic Gaussian noise and a disjoint out-of-distribution range.
Both are seed-deterministic.  :func:`with_input_uncertainty` declares a
per-feature input variance on an existing dataset and can optionally
corrupt the stored inputs with matching Gaussian noise to emulate noisy
test-time measurements.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .rng import RngStream

REGRESSION_NOISE_STD = 0.3  # both the constant and the x-scaled noise term


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Inputs, labels, optional declared input variance, and provenance.

    ``input_var`` is a per-feature variance shared by the whole set (None
    when no input uncertainty has been declared).  ``meta`` records the
    generator, its parameters, and the seed.
    """

    task: str  # "classification" | "regression"
    inputs: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) int64 class indices or float64 targets
    input_var: np.ndarray | None = None
    meta: dict = None

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2:
            raise ValueError("inputs must be a (n, d) array")
        labels = np.asarray(self.labels)
        if labels.shape != (inputs.shape[0],):
            raise ValueError("inputs and labels differ in length")
        input_var = self.input_var
        if input_var is not None:
            input_var = np.asarray(input_var, dtype=np.float64)
            if input_var.shape != (inputs.shape[1],):
                raise ValueError("input_var must hold one variance per feature")
            if np.any(input_var < 0.0):
                raise ValueError("input variances must be non-negative")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "input_var", input_var)
        object.__setattr__(self, "meta", dict(self.meta or {}))

    def __len__(self) -> int:
        return self.inputs.shape[0]


def two_moons(n: int, noise_sigma: float, seed: int) -> LabeledDataset:
    """Two interleaving half-circles with isotropic Gaussian noise.

    Class 0 sits on ``(cos t, sin t)`` and class 1 on
    ``(1 - cos t, 0.5 - sin t)`` for ``t`` evenly spaced over ``[0, pi]``;
    classes get ``floor(n/2)`` and ``ceil(n/2)`` points.  ``noise_sigma``
    is recorded in ``meta`` as the set's input noise level.
    """
    if n < 2:
        raise ValueError("need at least 2 points")
    if noise_sigma < 0.0:
        raise ValueError("noise_sigma must be non-negative")
    n0 = n // 2
    n1 = n - n0
    t0 = np.linspace(0.0, np.pi, n0)
    t1 = np.linspace(0.0, np.pi, n1)
    x = np.concatenate(
        [
            np.column_stack([np.cos(t0), np.sin(t0)]),
            np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)]),
        ]
    )
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_sigma > 0.0:
        rng = RngStream(seed).child("two-moons")
        x = x + noise_sigma * rng.standard_normal(x.shape)
    return LabeledDataset(
        task="classification",
        inputs=x,
        labels=labels,
        meta={"generator": "two-moons", "n": n, "noise_sigma": noise_sigma, "seed": seed},
    )


def regression_mean(x):
    """Noise-free regression target ``x sin(x)``."""
    x = np.asarray(x, dtype=np.float64)
    return x * np.sin(x)


def _sample_targets(xs: np.ndarray, rng: RngStream) -> np.ndarray:
    """Targets ``x sin(x) + e1 + e2 x`` with fresh per-point noise draws.

    ``e1`` is homoscedastic and ``e2 x`` heteroscedastic, both with
    standard deviation :data:`REGRESSION_NOISE_STD`, so the residual
    variance at ``x`` is ``0.3^2 (1 + x^2)``.
    """
    eps = REGRESSION_NOISE_STD * rng.standard_normal((xs.shape[0], 2))
    return regression_mean(xs) + eps[:, 0] + eps[:, 1] * xs


def toy_regression(
    n_train: int = 1000, n_ood: int = 200, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    """Noisy ``x sin(x)`` training set plus an out-of-distribution set.

    Training inputs are equally spaced on ``[0, 10]``, OOD inputs on
    ``[10, 12]`` (the ranges share only the endpoint).  No noise is added
    to the inputs themselves.
    """
    if n_train < 2:
        raise ValueError("need at least 2 training points")
    if n_ood < 0:
        raise ValueError("n_ood must be non-negative")
    rng = RngStream(seed).child("toy-regression")
    xs_train = np.linspace(0.0, 10.0, n_train)
    xs_ood = np.linspace(10.0, 12.0, n_ood) if n_ood > 0 else np.empty(0)
    y_train = _sample_targets(xs_train, rng.child("train"))
    y_ood = _sample_targets(xs_ood, rng.child("ood"))
    meta = {"generator": "toy-regression", "n_train": n_train, "n_ood": n_ood, "seed": seed}
    train = LabeledDataset(
        task="regression",
        inputs=xs_train[:, None],
        labels=y_train,
        meta=dict(meta, split="train"),
    )
    ood = LabeledDataset(
        task="regression",
        inputs=xs_ood[:, None],
        labels=y_ood,
        meta=dict(meta, split="ood"),
    )
    return train, ood


def with_input_uncertainty(
    ds: LabeledDataset, sigma: float, seed: int = 0, corrupt: bool = False
) -> LabeledDataset:
    """Declare input uncertainty ``sigma^2`` on every feature of a dataset.

    With ``corrupt=False`` only the declared ``input_var`` changes and the
    stored inputs stay bit-identical; with ``corrupt=True`` the inputs are
    additionally perturbed with ``N(0, sigma^2)`` noise, emulating test
    inputs that really were measured noisily.
    """
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    inputs = ds.inputs
    if corrupt and sigma > 0.0:
        rng = RngStream(seed).child("input-corruption")
        inputs = inputs + sigma * rng.standard_normal(inputs.shape)
    return replace(
        ds,
        inputs=inputs,
        input_var=np.full(ds.inputs.shape[1], float(sigma) ** 2),
        meta=dict(ds.meta, iu_sigma=sigma, corrupted=bool(corrupt and sigma > 0.0)),
    )


# --------------------------------------------------------------------------
# CSV dump/load with a JSON meta sidecar
# --------------------------------------------------------------------------


def _meta_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def save_dataset(ds: LabeledDataset, path) -> None:
    """Write ``x1,x2,label`` / ``x,y`` CSV plus a ``.meta.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if ds.task == "classification":
            if ds.inputs.shape[1] != 2:
                raise ValueError("classification CSV schema expects 2 features")
            writer.writerow(["x1", "x2", "label"])
            for row, label in zip(ds.inputs, ds.labels):
                writer.writerow([repr(float(row[0])), repr(float(row[1])), int(label)])
        else:
            if ds.inputs.shape[1] != 1:
                raise ValueError("regression CSV schema expects 1 feature")
            writer.writerow(["x", "y"])
            for row, y in zip(ds.inputs, ds.labels):
                writer.writerow([repr(float(row[0])), repr(float(y))])
    meta_doc = {
        "task": ds.task,
        "meta": ds.meta,
        "input_var": None if ds.input_var is None else ds.input_var.tolist(),
    }
    with open(_meta_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_dataset(path) -> LabeledDataset:
    """Read a dataset written by :func:`save_dataset`."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header == ["x1", "x2", "label"]:
        task = "classification"
        inputs = np.array([[float(r[0]), float(r[1])] for r in rows])
        labels = np.array([int(r[2]) for r in rows], dtype=np.int64)
    elif header == ["x", "y"]:
        task = "regression"
        inputs = np.array([[float(r[0])] for r in rows])
        labels = np.array([float(r[1]) for r in rows])
    else:
        raise ValueError(f"{path}: unrecognized dataset header {header}")
    meta_doc = {}
    if os.path.exists(_meta_path(path)):
        with open(_meta_path(path), "r", encoding="utf-8") as fh:
            meta_doc = json.load(fh)
    input_var = meta_doc.get("input_var")
    return LabeledDataset(
        task=meta_doc.get("task", task),
        inputs=inputs,
        labels=labels,
        input_var=None if input_var is None else np.asarray(input_var, dtype=np.float64),
        meta=meta_doc.get("meta", {}),
    )
