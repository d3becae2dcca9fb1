"""Joint input / epistemic / aleatoric uncertainty estimation.

Two propagation paths turn an input with per-feature variance into an
output decomposition:

* the Taylor path linearizes each stochastic realization at the input mean
  and pushes the variance through the squared Jacobian (cost: one pass per
  realization, M total);
* the Monte Carlo path draws input samples from the declared Gaussian and
  runs every realization on every sample (cost: N x M passes).

Both summarize the per-realization results the same way: the mean of means
is the prediction, the variance of means is the input-attributed variance,
and the mean of per-realization variances is the epistemic part.  For
regression the aleatoric head is carried through untouched and averaged.
Classification converts (logit mean, logit variance) pairs to class
probabilities with a Monte Carlo expectation of softmax over Gaussian logit
draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend
from .linalg import as_vector, mean_and_variance, sandwich_diag, softmax
from .network import (
    ModelSpec,
    Params,
    realize_layers,
    realize_layers_batch,
    sample_realization,
)
from .rng import RngStream, gaussian


@dataclass(frozen=True, eq=False)
class InputWithUncertainty:
    """An input mean vector with per-feature variance."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = as_vector(self.mu, "mu")
        var = as_vector(self.var, "var")
        if mu.shape != var.shape:
            raise ValueError("mu and var must have the same length")
        if np.any(var < 0.0):
            raise ValueError("input variances must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @classmethod
    def from_sigma(cls, x, sigma: float) -> "InputWithUncertainty":
        """Same standard deviation ``sigma`` on every feature."""
        x = as_vector(x, "x")
        if sigma < 0.0:
            raise ValueError("sigma must be non-negative")
        return cls(mu=x, var=np.full(x.shape, float(sigma) ** 2))


@dataclass(frozen=True, eq=False)
class UncertaintyDecomposition:
    """Outputs of one combined estimate at one input.

    All vectors have the output width of the interpretation they belong to:
    per-class logits for classification, the scalar mean head for
    regression.  ``var_ale`` is only present for regression.
    ``forward_passes`` records the pass budget the estimate consumed: M on
    the Taylor path, N*M on the Monte Carlo path.
    """

    task: str
    mu_o: np.ndarray
    var_inp: np.ndarray
    var_epi: np.ndarray
    var_ale: np.ndarray | None
    forward_passes: int


@dataclass(frozen=True, eq=False)
class ClassProbabilities:
    """Class probabilities under the three uncertainty readings."""

    p_ale: np.ndarray
    p_inp: np.ndarray
    p_epi: np.ndarray


def _stats_along(arr: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased variance along ``axis``.

    Slices whose values are all identical get mean = that value and
    variance exactly 0.0 (same degenerate-case rule as
    :func:`uniunc.linalg.mean_and_variance`).
    """
    mean = arr.mean(axis=axis)
    var = arr.var(axis=axis, ddof=1)
    constant = arr.max(axis=axis) == arr.min(axis=axis)
    if np.any(constant):
        first = np.take(arr, 0, axis=axis)
        mean = np.where(constant, first, mean)
        var = np.where(constant, 0.0, var)
    return mean, var


def _draw_realizations(spec: ModelSpec, rng: RngStream, count: int) -> list:
    return [sample_realization(spec, rng) for _ in range(count)]


def epistemic_passes(
    spec: ModelSpec, params: Params, x, m: int, rng: RngStream
) -> np.ndarray:
    """Outputs of ``m`` independent stochastic realizations at one input.

    Returns an ``(m, output_dim)`` array, one forward pass per row.  For
    ensembles the realizations cycle the members round-robin, so ``m`` equal
    to the member count gives exactly one pass per member; for EU method
    ``none`` all rows are identical.
    """
    if m < 2:
        raise ValueError("need at least 2 passes for an epistemic estimate")
    x = as_vector(x, "x")
    if x.shape[0] != spec.input_dim:
        raise ValueError(f"input has length {x.shape[0]}, expected {spec.input_dim}")
    reals = _draw_realizations(spec, rng.child("realizations"), m)
    layers = realize_layers_batch(spec, params, reals)
    return backend.forward_batch(layers, np.tile(x, (m, 1)))


def combine_taylor(
    spec: ModelSpec,
    params: Params,
    inp: InputWithUncertainty,
    m: int,
    rng: RngStream,
) -> UncertaintyDecomposition:
    """Epistemic sampling composed with first-order input propagation.

    Each of the ``m`` realizations is evaluated once at the input mean; its
    input-attributed variance is the diagonal of ``J diag(var) J^T`` with
    ``J`` the realization's Jacobian there.  Exactly ``m`` passes.
    """
    if m < 2:
        raise ValueError("need at least 2 passes for an epistemic estimate")
    if inp.mu.shape[0] != spec.input_dim:
        raise ValueError(f"input has length {inp.mu.shape[0]}, expected {spec.input_dim}")
    reals = _draw_realizations(spec, rng.child("realizations"), m)
    layers = realize_layers_batch(spec, params, reals)
    out, jac = backend.jacobian_batch(layers, np.tile(inp.mu, (m, 1)))

    if spec.task == "classification":
        mu_samples = out
        jac_rows = jac
        var_ale = None
    else:
        mu_samples = out[:, :1]
        jac_rows = jac[:, :1, :]
        var_ale = np.exp(out[:, 1:2]).mean(axis=0)
    var_samples = np.stack([sandwich_diag(jac_rows[k], inp.var) for k in range(m)])

    mu_o, var_inp = mean_and_variance(mu_samples)
    return UncertaintyDecomposition(
        task=spec.task,
        mu_o=mu_o,
        var_inp=var_inp,
        var_epi=var_samples.mean(axis=0),
        var_ale=var_ale,
        forward_passes=m,
    )


def combine_mc(
    spec: ModelSpec,
    params: Params,
    inp: InputWithUncertainty,
    n: int,
    m: int,
    rng: RngStream,
) -> UncertaintyDecomposition:
    """Epistemic sampling composed with Monte Carlo input propagation.

    The epistemic stage instantiates ``m`` realizations once (for ensembles
    these are the members); the propagation stage draws ``n`` input samples
    from the declared Gaussian and runs every realization on every sample.
    Per-sample statistics are taken over the realizations, then sample
    statistics across the inputs.  Exactly ``n * m`` passes.
    """
    if n < 2:
        raise ValueError("need at least 2 input samples")
    if m < 2:
        raise ValueError("need at least 2 passes for an epistemic estimate")
    if inp.mu.shape[0] != spec.input_dim:
        raise ValueError(f"input has length {inp.mu.shape[0]}, expected {spec.input_dim}")
    x_samples = gaussian(rng.child("inputs"), inp.mu, inp.var, n)
    reals = _draw_realizations(spec, rng.child("realizations"), m)
    out = np.empty((m, n, spec.output_dim))
    for k, real in enumerate(reals):
        out[k] = backend.forward_batch(realize_layers(spec, params, real), x_samples)

    if spec.task == "classification":
        values = out
        var_ale = None
    else:
        values = out[:, :, :1]
        var_ale = np.exp(out[:, :, 1]).mean(axis=(0, 1), keepdims=False)[None]
    per_sample_mu, per_sample_var = _stats_along(values, axis=0)

    mu_o, var_inp = mean_and_variance(per_sample_mu)
    return UncertaintyDecomposition(
        task=spec.task,
        mu_o=mu_o,
        var_inp=var_inp,
        var_epi=per_sample_var.mean(axis=0),
        var_ale=var_ale,
        forward_passes=n * m,
    )


def sampling_softmax(mu_logits, var_logits, k: int, rng: RngStream) -> np.ndarray:
    """Monte Carlo expectation of softmax over Gaussian logit draws.

    Each of the ``k`` draws samples every logit independently from
    ``N(mu, var)``; the result is the mean softmax, a point on the
    probability simplex.  With zero variance this returns ``softmax(mu)``
    bit-for-bit regardless of ``k``.
    """
    mu = as_vector(mu_logits, "mu_logits")
    var = as_vector(var_logits, "var_logits")
    if mu.shape != var.shape:
        raise ValueError("logit mean and variance must have the same length")
    if np.any(var < 0.0):
        raise ValueError("logit variances must be non-negative")
    if k < 1:
        raise ValueError("need at least 1 draw")
    if np.all(var == 0.0):
        return softmax(mu)
    z = mu + np.sqrt(var) * rng.standard_normal((k, mu.shape[0]))
    return softmax(z).mean(axis=0)


def classify(
    decomp: UncertaintyDecomposition, k: int = 100, rng: RngStream | None = None
) -> ClassProbabilities:
    """Turn a classification decomposition into three probability vectors.

    ``p_ale`` is the plain softmax of the mean logits; ``p_inp`` and
    ``p_epi`` push the input-attributed and epistemic logit variances
    through :func:`sampling_softmax` with ``k`` draws each.
    """
    if decomp.task != "classification":
        raise ValueError("classify needs a classification decomposition")
    if rng is None:
        rng = RngStream(0).child("classify")
    return ClassProbabilities(
        p_ale=softmax(decomp.mu_o),
        p_inp=sampling_softmax(decomp.mu_o, decomp.var_inp, k, rng.child("inp")),
        p_epi=sampling_softmax(decomp.mu_o, decomp.var_epi, k, rng.child("epi")),
    )


@dataclass(frozen=True)
class RegressionPrediction:
    """Scalar regression outputs; total variance is the sum of the parts."""

    mean: float
    var_ale: float
    var_inp: float
    var_epi: float

    @property
    def var_total(self) -> float:
        return self.var_ale + self.var_inp + self.var_epi


def regress(decomp: UncertaintyDecomposition) -> RegressionPrediction:
    """Unpack a regression decomposition into scalar quantities."""
    if decomp.task != "regression":
        raise ValueError("regress needs a regression decomposition")
    return RegressionPrediction(
        mean=float(decomp.mu_o[0]),
        var_ale=float(decomp.var_ale[0]),
        var_inp=float(decomp.var_inp[0]),
        var_epi=float(decomp.var_epi[0]),
    )
