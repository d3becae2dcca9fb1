"""Experiment harness: train models, sweep estimator cells, emit artifacts.

A sweep covers the full (EU method) x (propagation path) x (sigma level)
matrix over an evaluation grid.  Every cell writes one CSV of per-point
decompositions, a shared ``metrics.json`` summarizes grid means, per-cell
test accuracy and monotonicity verdicts across sigma levels, and optional
heatmap PNGs mirror the grid channels.  All artifacts are byte-deterministic
for a fixed config and seed: random streams are derived from labeled paths,
never from global state, and output files contain no timestamps.

Per-point streams are derived without the sigma level in the path, so the
same input-noise draws and realizations are reused across sigma levels
(common random numbers); monotone trends in sigma are then not masked by
resampling noise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset, save_dataset, toy_regression, two_moons, with_input_uncertainty
from .network import EuMethod, ModelSpec, Params, load_model, save_model
from .rng import RngStream, derive_seed
from .training import TrainConfig, train
from .uncertainty import (
    InputWithUncertainty,
    classify,
    combine_mc,
    combine_taylor,
)

TASKS = ("two-moons", "toy-regression")
IU_METHODS = ("taylor", "mc")
EU_METHODS = ("none", "mc-dropout", "mc-dropconnect", "ensemble", "flipout")

VARIANCE_NOTE = "# uncertainty columns are variances; render as sqrt for standard deviation"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists the offenders."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration: " + "; ".join(problems))
        self.problems = list(problems)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular evaluation grid: per-axis (low, high) bounds and counts."""

    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    @property
    def ndim(self) -> int:
        return len(self.bounds)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.resolution))

    def points(self) -> np.ndarray:
        """All grid coordinates, first axis varying slowest, shape (R, ndim)."""
        axes = [
            np.linspace(lo, hi, r)
            for (lo, hi), r in zip(self.bounds, self.resolution)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.reshape(-1) for m in mesh])

    def to_dict(self) -> dict:
        return {"bounds": [list(b) for b in self.bounds], "resolution": list(self.resolution)}

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(
            bounds=tuple(tuple(float(x) for x in b) for b in d["bounds"]),
            resolution=tuple(int(r) for r in d["resolution"]),
        )


DEFAULT_GRIDS = {
    "two-moons": GridSpec(bounds=((-2.0, 3.0), (-1.5, 2.0)), resolution=(100, 100)),
    "toy-regression": GridSpec(bounds=((0.0, 12.0),), resolution=(121,)),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one sweep needs; JSON-serializable and seed-complete."""

    task: str = "two-moons"
    eu_methods: tuple[str, ...] = EU_METHODS
    iu_methods: tuple[str, ...] = IU_METHODS
    sigma_levels: tuple[float, ...] = (0.25, 0.5, 1.0)
    m_passes: int = 20
    n_iu_samples: int = 50
    grid: GridSpec | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "results"
    seed: int = 0
    # model and data knobs
    hidden: tuple[int, ...] = (64, 64, 64)
    train_size: int = 1000
    test_size: int = 200
    ood_size: int = 200
    noise_sigma: float = 0.1
    softmax_draws: int = 100
    dropout_p: float = 0.2
    dropconnect_p: float = 0.05
    ensemble_members: int = 5
    flipout_prior_var: float = 1.0

    def resolved_grid(self) -> GridSpec:
        return self.grid if self.grid is not None else DEFAULT_GRIDS[self.task]

    def validate(self) -> list[str]:
        """Collect every problem instead of stopping at the first."""
        problems = []
        if self.task not in TASKS:
            problems.append(f"task: unknown {self.task!r}, choose from {list(TASKS)}")
        if not self.eu_methods:
            problems.append("eu_methods: must not be empty")
        for m in self.eu_methods:
            if m not in EU_METHODS:
                problems.append(f"eu_methods: unknown {m!r}")
        if not self.iu_methods:
            problems.append("iu_methods: must not be empty")
        for m in self.iu_methods:
            if m not in IU_METHODS:
                problems.append(f"iu_methods: unknown {m!r}")
        if not self.sigma_levels:
            problems.append("sigma_levels: must not be empty")
        elif any(s < 0 for s in self.sigma_levels):
            problems.append("sigma_levels: must be non-negative")
        if self.m_passes < 2:
            problems.append("m_passes: need at least 2")
        if self.n_iu_samples < 2:
            problems.append("n_iu_samples: need at least 2")
        grid = self.grid
        if grid is not None:
            if len(grid.bounds) != len(grid.resolution):
                problems.append("grid: bounds and resolution lengths differ")
            if any(r < 2 for r in grid.resolution):
                problems.append("grid: resolution must be at least 2 per axis")
            for lo, hi in grid.bounds:
                if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                    problems.append(f"grid: invalid bounds ({lo}, {hi})")
                    break
            expected = 2 if self.task == "two-moons" else 1
            if self.task in TASKS and len(grid.bounds) != expected:
                problems.append(f"grid: {self.task} needs {expected} axis/axes")
        if self.train_size < 2:
            problems.append("train_size: need at least 2")
        if self.test_size < 1:
            problems.append("test_size: need at least 1")
        if self.ood_size < 1:
            problems.append("ood_size: need at least 1")
        if self.noise_sigma < 0:
            problems.append("noise_sigma: must be non-negative")
        if self.softmax_draws < 1:
            problems.append("softmax_draws: need at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            problems.append("dropout_p: must lie in [0, 1)")
        if not 0.0 <= self.dropconnect_p < 1.0:
            problems.append("dropconnect_p: must lie in [0, 1)")
        if self.ensemble_members < 2:
            problems.append("ensemble_members: need at least 2")
        if self.flipout_prior_var <= 0:
            problems.append("flipout_prior_var: must be positive")
        if not self.hidden or any(h < 1 for h in self.hidden):
            problems.append("hidden: widths must be positive")
        return problems

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "eu_methods": list(self.eu_methods),
            "iu_methods": list(self.iu_methods),
            "sigma_levels": list(self.sigma_levels),
            "m_passes": self.m_passes,
            "n_iu_samples": self.n_iu_samples,
            "grid": self.resolved_grid().to_dict(),
            "train": self.train.to_dict(),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "hidden": list(self.hidden),
            "train_size": self.train_size,
            "test_size": self.test_size,
            "ood_size": self.ood_size,
            "noise_sigma": self.noise_sigma,
            "softmax_draws": self.softmax_draws,
            "dropout_p": self.dropout_p,
            "dropconnect_p": self.dropconnect_p,
            "ensemble_members": self.ensemble_members,
            "flipout_prior_var": self.flipout_prior_var,
        }

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        problems = []
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown config keys: {', '.join(unknown)}"])
        kwargs = {}
        for key in known & set(d):
            value = d[key]
            if key == "grid" and value is not None:
                value = GridSpec.from_dict(value)
            elif key == "train":
                try:
                    value = TrainConfig.from_dict(value)
                except (ValueError, KeyError) as exc:
                    problems.append(f"train: {exc}")
                    continue
            elif key in ("eu_methods", "iu_methods", "hidden"):
                value = tuple(value)
            elif key == "sigma_levels":
                value = tuple(float(s) for s in value)
            kwargs[key] = value
        if problems:
            raise ConfigError(problems)
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def model_spec_for(config: ExperimentConfig, eu_kind: str) -> ModelSpec:
    """The network a given EU method uses under this config."""
    if eu_kind == "mc-dropout":
        eu = EuMethod.mc_dropout(config.dropout_p)
    elif eu_kind == "mc-dropconnect":
        eu = EuMethod.mc_dropconnect(config.dropconnect_p)
    elif eu_kind == "ensemble":
        eu = EuMethod.ensemble(config.ensemble_members)
    elif eu_kind == "flipout":
        eu = EuMethod.flipout(config.flipout_prior_var)
    else:
        eu = EuMethod.none()
    if config.task == "two-moons":
        widths = (2, *config.hidden, 2)
        task = "classification"
    else:
        widths = (1, *config.hidden, 2)
        task = "regression"
    return ModelSpec(layer_widths=widths, task=task, eu=eu)


def effective_passes(config: ExperimentConfig, eu_kind: str) -> int:
    """Pass count M per EU method: member count for ensembles, the
    configured count for stochastic methods, and the minimal 2 for the
    deterministic baseline (whose passes are all identical)."""
    if eu_kind == "ensemble":
        return config.ensemble_members
    if eu_kind == "none":
        return 2
    return config.m_passes


@dataclass(frozen=True, eq=False)
class GridResult:
    """Per-point decompositions over one grid for one estimator cell."""

    task: str
    eu: str
    iu: str
    sigma: float
    grid: GridSpec
    points: np.ndarray  # (R, ndim)
    mu: np.ndarray  # (R, C) logits or (R, 1) means
    var_ale: np.ndarray
    var_inp: np.ndarray
    var_epi: np.ndarray
    passes: np.ndarray  # (R,) int
    p_ale: np.ndarray | None = None
    p_inp: np.ndarray | None = None
    p_epi: np.ndarray | None = None

    def columns(self) -> list[str]:
        if self.task == "two-moons":
            c = self.mu.shape[1]
            names = [f"{base}{i}" for base in ("mu", "var_ale", "var_inp", "var_epi") for i in range(c)]
            probs = [f"{base}{i}" for base in ("p_ale", "p_inp", "p_epi") for i in range(c)]
            return ["x1", "x2"] + names + probs + ["passes"]
        return ["x", "mu", "var_ale", "var_inp", "var_epi", "passes"]

    def column(self, name: str) -> np.ndarray:
        """One column by CSV header name."""
        table = dict(zip(self.columns(), self._matrix().T))
        if name not in table:
            raise ValueError(f"no channel {name!r}; available: {self.columns()}")
        return table[name]

    def _matrix(self) -> np.ndarray:
        if self.task == "two-moons":
            blocks = [self.points, self.mu, self.var_ale, self.var_inp, self.var_epi,
                      self.p_ale, self.p_inp, self.p_epi, self.passes[:, None]]
        else:
            blocks = [self.points, self.mu, self.var_ale, self.var_inp, self.var_epi,
                      self.passes[:, None]]
        return np.column_stack(blocks)

    def to_csv(self, path) -> None:
        header = ",".join(self.columns())
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(VARIANCE_NOTE + "\n")
            fh.write(header + "\n")
            n_cols = len(self.columns())
            for row in self._matrix():
                cells = [repr(float(v)) for v in row[: n_cols - 1]]
                cells.append(str(int(row[-1])))
                fh.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path, task=None, eu="?", iu="?", sigma=float("nan")) -> "GridResult":
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        header_idx = 1 if lines and lines[0].startswith("#") else 0
        header = lines[header_idx].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[header_idx + 1 :]])
        if header[:2] == ["x1", "x2"]:
            task = task or "two-moons"
            c = sum(1 for h in header if h.startswith("mu"))
            points = data[:, :2]
            off = 2
            mu = data[:, off : off + c]; off += c
            var_ale = data[:, off : off + c]; off += c
            var_inp = data[:, off : off + c]; off += c
            var_epi = data[:, off : off + c]; off += c
            p_ale = data[:, off : off + c]; off += c
            p_inp = data[:, off : off + c]; off += c
            p_epi = data[:, off : off + c]; off += c
            passes = data[:, off].astype(np.int64)
            grid = _grid_from_points(points)
            return cls(task, eu, iu, sigma, grid, points, mu, var_ale, var_inp, var_epi,
                       passes, p_ale, p_inp, p_epi)
        task = task or "toy-regression"
        points = data[:, :1]
        grid = _grid_from_points(points)
        return cls(task, eu, iu, sigma, grid, points, data[:, 1:2], data[:, 2:3],
                   data[:, 3:4], data[:, 4:5], data[:, 5].astype(np.int64))


def _grid_from_points(points: np.ndarray) -> GridSpec:
    """Recover the grid from row-major flattened coordinates."""
    ndim = points.shape[1]
    bounds, resolution = [], []
    for d in range(ndim):
        vals = np.unique(points[:, d])
        bounds.append((float(vals.min()), float(vals.max())))
        resolution.append(len(vals))
    return GridSpec(bounds=tuple(bounds), resolution=tuple(resolution))


def grid_eval(
    spec: ModelSpec,
    params: Params,
    iu_method: str,
    sigma: float,
    grid: GridSpec,
    *,
    m: int,
    n: int,
    softmax_draws: int,
    rng: RngStream,
    eu_name: str | None = None,
    task_name: str | None = None,
) -> GridResult:
    """Evaluate one estimator cell at every grid point.

    Every point declares ``sigma^2`` input variance on all features and
    gets its own child stream keyed by point index only, so grids evaluate
    identically regardless of iteration or scheduling order.
    """
    if iu_method not in IU_METHODS:
        raise ValueError(f"unknown IU method {iu_method!r}")
    if not all(np.isfinite(b) for lohi in grid.bounds for b in lohi):
        raise ValueError("grid bounds must be finite")
    points = grid.points()
    classification = spec.task == "classification"
    width = spec.output_dim if classification else 1
    n_pts = points.shape[0]

    mu = np.empty((n_pts, width))
    var_ale = np.zeros((n_pts, width))
    var_inp = np.empty((n_pts, width))
    var_epi = np.empty((n_pts, width))
    passes = np.empty(n_pts, dtype=np.int64)
    p_ale = np.empty((n_pts, width)) if classification else None
    p_inp = np.empty((n_pts, width)) if classification else None
    p_epi = np.empty((n_pts, width)) if classification else None

    for i, x in enumerate(points):
        point_rng = rng.child("point", i)
        inp = InputWithUncertainty.from_sigma(x, sigma)
        if iu_method == "taylor":
            decomp = combine_taylor(spec, params, inp, m, point_rng.child("estimate"))
        else:
            decomp = combine_mc(spec, params, inp, n, m, point_rng.child("estimate"))
        mu[i] = decomp.mu_o
        var_inp[i] = decomp.var_inp
        var_epi[i] = decomp.var_epi
        if decomp.var_ale is not None:
            var_ale[i] = decomp.var_ale
        passes[i] = decomp.forward_passes
        if classification:
            probs = classify(decomp, k=softmax_draws, rng=point_rng.child("classify"))
            p_ale[i], p_inp[i], p_epi[i] = probs.p_ale, probs.p_inp, probs.p_epi

    return GridResult(
        task=task_name or ("two-moons" if classification else "toy-regression"),
        eu=eu_name or spec.eu.kind,
        iu=iu_method,
        sigma=float(sigma),
        grid=grid,
        points=points,
        mu=mu,
        var_ale=var_ale,
        var_inp=var_inp,
        var_epi=var_epi,
        passes=passes,
        p_ale=p_ale,
        p_inp=p_inp,
        p_epi=p_epi,
    )


def _cell_accuracy(
    spec: ModelSpec,
    params: Params,
    iu_method: str,
    sigma: float,
    test_ds: LabeledDataset,
    *,
    m: int,
    n: int,
    rng: RngStream,
) -> float:
    """Argmax accuracy of the cell's decomposed prediction on noisy inputs."""
    correct = 0
    for i, (x, y) in enumerate(zip(test_ds.inputs, test_ds.labels)):
        inp = InputWithUncertainty(x, test_ds.input_var)
        point_rng = rng.child("test-point", i)
        if iu_method == "taylor":
            decomp = combine_taylor(spec, params, inp, m, point_rng)
        else:
            decomp = combine_mc(spec, params, inp, n, m, point_rng)
        correct += int(np.argmax(decomp.mu_o) == y)
    return correct / len(test_ds)


@dataclass(frozen=True, eq=False)
class CellSummary:
    eu: str
    iu: str
    sigma: float
    accuracy: float | None
    mean_var_ale: float
    mean_var_inp: float
    mean_var_epi: float


def summarize(cells: list[CellSummary]) -> dict:
    """Metrics document: per-cell grid means plus monotonicity verdicts.

    The verdict for a (eu, iu) pair says whether the grid-mean input and
    epistemic variances strictly increase across its sigma levels;
    pairs with fewer than two levels report ``"insufficient levels"``.
    """
    if not cells:
        raise ValueError("no cells to summarize")
    by_pair: dict[tuple[str, str], list[CellSummary]] = {}
    for cell in cells:
        by_pair.setdefault((cell.eu, cell.iu), []).append(cell)
    verdicts = {}
    for pair, group in by_pair.items():
        group = sorted(group, key=lambda c: c.sigma)
        if len(group) < 2:
            verdicts[pair] = ("insufficient levels", "insufficient levels")
        else:
            inp = [c.mean_var_inp for c in group]
            epi = [c.mean_var_epi for c in group]
            verdicts[pair] = (
                bool(all(b > a for a, b in zip(inp, inp[1:]))),
                bool(all(b > a for a, b in zip(epi, epi[1:]))),
            )
    doc = {}
    for cell in cells:
        mono_inp, mono_epi = verdicts[(cell.eu, cell.iu)]
        doc[f"{cell.eu}|{cell.iu}|{repr(cell.sigma)}"] = {
            "eu": cell.eu,
            "iu": cell.iu,
            "sigma": cell.sigma,
            "accuracy": cell.accuracy,
            "mean_var_ale": cell.mean_var_ale,
            "mean_var_inp": cell.mean_var_inp,
            "mean_var_epi": cell.mean_var_epi,
            "monotone_inp": mono_inp,
            "monotone_epi": mono_epi,
        }
    return doc


def prepare_datasets(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Training set plus the clean evaluation set (test or OOD)."""
    if config.task == "two-moons":
        train_ds = two_moons(config.train_size, config.noise_sigma,
                             derive_seed(config.seed, "train-data"))
        eval_ds = two_moons(config.test_size, config.noise_sigma,
                            derive_seed(config.seed, "test-data"))
        return train_ds, eval_ds
    train_ds, ood_ds = toy_regression(config.train_size, config.ood_size,
                                      derive_seed(config.seed, "train-data"))
    return train_ds, ood_ds


def train_models(config: ExperimentConfig, train_ds: LabeledDataset, out_dir: Path):
    """Train one model per EU method, writing checkpoints and loss logs."""
    models = {}
    for eu in config.eu_methods:
        spec = model_spec_for(config, eu)
        t_cfg = replace(config.train, seed=derive_seed(config.seed, "train", eu))
        params = train(spec, train_ds, t_cfg, log_path=out_dir / f"train_{eu}.csv")
        save_model(out_dir / f"model_{eu}.json", spec, params)
        models[eu] = (spec, params)
    return models


def load_models(config: ExperimentConfig, out_dir: Path):
    """Load the checkpoints a previous ``train`` left in ``out_dir``."""
    models = {}
    for eu in config.eu_methods:
        spec, params = load_model(out_dir / f"model_{eu}.json")
        models[eu] = (spec, params)
    return models


def grid_csv_name(eu: str, iu: str, sigma: float) -> str:
    return f"grid_{eu}_{iu}_s{repr(float(sigma))}.csv"


def run(config: ExperimentConfig, render: bool = True, echo=None) -> dict:
    """Full sweep: train, evaluate every cell, summarize, optionally render.

    Returns the metrics document.  Reruns with the same config and seed
    write byte-identical CSV/JSON artifacts.
    """
    problems = config.validate()
    if problems:
        raise ConfigError(problems)
    say = echo or (lambda *_: None)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")

    train_ds, eval_ds = prepare_datasets(config)
    save_dataset(train_ds, out_dir / "train.csv")

    say(f"training {len(config.eu_methods)} model(s) on {config.task}")
    models = train_models(config, train_ds, out_dir)

    grid = config.resolved_grid()
    root = RngStream(config.seed)
    cells: list[CellSummary] = []
    results: list[GridResult] = []
    for eu in config.eu_methods:
        spec, params = models[eu]
        m = effective_passes(config, eu)
        for iu in config.iu_methods:
            cell_rng = root.child("grid", config.task, eu, iu)
            acc_rng = root.child("accuracy", config.task, eu, iu)
            for sigma in config.sigma_levels:
                started = time.perf_counter()
                result = grid_eval(
                    spec, params, iu, sigma, grid,
                    m=m, n=config.n_iu_samples, softmax_draws=config.softmax_draws,
                    rng=cell_rng, eu_name=eu, task_name=config.task,
                )
                say(
                    f"evaluated eu={eu} iu={iu} sigma={sigma} "
                    f"({int(result.passes.sum())} passes, {time.perf_counter() - started:.1f}s)"
                )
                result.to_csv(out_dir / grid_csv_name(eu, iu, sigma))
                accuracy = None
                if config.task == "two-moons":
                    noisy_test = with_input_uncertainty(
                        eval_ds, sigma,
                        seed=derive_seed(config.seed, "test-corrupt", repr(float(sigma))),
                        corrupt=True,
                    )
                    accuracy = _cell_accuracy(
                        spec, params, iu, sigma, noisy_test,
                        m=m, n=config.n_iu_samples, rng=acc_rng,
                    )
                cells.append(
                    CellSummary(
                        eu=eu, iu=iu, sigma=float(sigma), accuracy=accuracy,
                        mean_var_ale=float(result.var_ale.mean()),
                        mean_var_inp=float(result.var_inp.mean()),
                        mean_var_epi=float(result.var_epi.mean()),
                    )
                )
                results.append(result)

    metrics = summarize(cells)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")

    if render:
        from .render import render_grid_result

        for result in results:
            render_grid_result(result, out_dir, points=train_ds)
    say(f"wrote {len(results)} grid CSVs and metrics.json to {out_dir}")
    return metrics
