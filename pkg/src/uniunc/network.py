"""ReLU MLP with stochastic realizations for epistemic uncertainty.

A model is described by an immutable :class:`ModelSpec` (layer widths, task,
epistemic-uncertainty mechanism) plus a parameter assignment.  Stochastic
estimators never mutate the network: they draw a frozen
:class:`PassRealization` (dropout masks, dropconnect masks, sampled
variational weights, or an ensemble member index) and evaluate the resulting
deterministic function.  Forward passes and exact input Jacobians run
through the kernel backend; the training-oriented forward/backward pair
lives here as plain NumPy since it is not sweep-critical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import backend
from .linalg import as_vector
from .rng import RngStream

EU_KINDS = ("none", "mc-dropout", "mc-dropconnect", "ensemble", "flipout")
TASKS = ("classification", "regression")

# regression output head layout
REG_MEAN, REG_LOGVAR = 0, 1


@dataclass(frozen=True)
class EuMethod:
    """Epistemic-uncertainty mechanism attached to a model.

    ``drop_p`` applies to the dropout/dropconnect kinds, ``members`` to
    ensembles, ``prior_var`` to the flipout (mean-field Gaussian) kind.
    """

    kind: str = "none"
    drop_p: float = 0.0
    members: int = 1
    prior_var: float = 1.0

    def __post_init__(self):
        if self.kind not in EU_KINDS:
            raise ValueError(f"unknown EU method {self.kind!r}; choose from {EU_KINDS}")
        if self.kind in ("mc-dropout", "mc-dropconnect") and not 0.0 <= self.drop_p < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")
        if self.kind == "ensemble" and self.members < 2:
            raise ValueError("ensembles need at least 2 members")
        if self.kind == "flipout" and self.prior_var <= 0.0:
            raise ValueError("flipout prior variance must be positive")

    @classmethod
    def none(cls) -> "EuMethod":
        return cls("none")

    @classmethod
    def mc_dropout(cls, p: float = 0.2) -> "EuMethod":
        return cls("mc-dropout", drop_p=p)

    @classmethod
    def mc_dropconnect(cls, p: float = 0.05) -> "EuMethod":
        return cls("mc-dropconnect", drop_p=p)

    @classmethod
    def ensemble(cls, members: int = 5) -> "EuMethod":
        return cls("ensemble", members=members)

    @classmethod
    def flipout(cls, prior_var: float = 1.0) -> "EuMethod":
        return cls("flipout", prior_var=prior_var)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "drop_p": self.drop_p,
            "members": self.members,
            "prior_var": self.prior_var,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EuMethod":
        return cls(
            kind=d["kind"],
            drop_p=float(d.get("drop_p", 0.0)),
            members=int(d.get("members", 1)),
            prior_var=float(d.get("prior_var", 1.0)),
        )


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense ReLU network.

    ``layer_widths`` lists input width, hidden widths, output width; every
    consecutive pair is one dense layer and ReLU follows every layer except
    the last.  Classification outputs one logit per class; regression
    outputs a (mean, log-variance) head pair, so its output width is 2.
    ``stochastic_layers`` are the dense-layer indices carrying the EU
    mechanism; by default the last two (or the only layer of a one-layer
    net).  Ensembles duplicate the whole network instead.
    """

    layer_widths: tuple[int, ...]
    task: str = "classification"
    eu: EuMethod = field(default_factory=EuMethod)
    stochastic_layers: tuple[int, ...] | None = None

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValueError("layer_widths needs at least (input, output), all positive")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.task == "classification" and widths[-1] < 2:
            raise ValueError("classification needs at least 2 output logits")
        if self.task == "regression" and widths[-1] != 2:
            raise ValueError("regression needs output width 2 (mean and log-variance heads)")
        if self.stochastic_layers is not None:
            layers = tuple(sorted(int(i) for i in set(self.stochastic_layers)))
            if any(i < 0 or i >= self.n_layers for i in layers):
                raise ValueError(f"stochastic_layers out of range 0..{self.n_layers - 1}")
            object.__setattr__(self, "stochastic_layers", layers)

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_classes(self) -> int:
        if self.task != "classification":
            raise ValueError("num_classes only applies to classification models")
        return self.output_dim

    @property
    def stochastic_range(self) -> tuple[int, ...]:
        """Dense layers carrying the EU mechanism (defaults to the last two)."""
        if self.stochastic_layers is not None:
            return self.stochastic_layers
        if self.n_layers == 1:
            return (0,)
        return (self.n_layers - 2, self.n_layers - 1)

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "task": self.task,
            "eu": self.eu.to_dict(),
            "stochastic_layers": (
                None if self.stochastic_layers is None else list(self.stochastic_layers)
            ),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        sl = d.get("stochastic_layers")
        return cls(
            layer_widths=tuple(d["layer_widths"]),
            task=d["task"],
            eu=EuMethod.from_dict(d["eu"]),
            stochastic_layers=None if sl is None else tuple(sl),
        )


@dataclass(frozen=True, eq=False)
class DenseParams:
    """Weights of one ordinary dense layer."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    @classmethod
    def from_arrays(cls, d: Mapping[str, np.ndarray]) -> "DenseParams":
        return cls(weight=d["weight"], bias=d["bias"])


@dataclass(frozen=True, eq=False)
class FlipoutParams:
    """Mean-field Gaussian posterior over one dense layer's weights."""

    weight_mu: np.ndarray
    weight_logvar: np.ndarray
    bias_mu: np.ndarray
    bias_logvar: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "weight_mu": self.weight_mu,
            "weight_logvar": self.weight_logvar,
            "bias_mu": self.bias_mu,
            "bias_logvar": self.bias_logvar,
        }

    @classmethod
    def from_arrays(cls, d: Mapping[str, np.ndarray]) -> "FlipoutParams":
        return cls(
            weight_mu=d["weight_mu"],
            weight_logvar=d["weight_logvar"],
            bias_mu=d["bias_mu"],
            bias_logvar=d["bias_logvar"],
        )


LayerParams = Union[DenseParams, FlipoutParams]
ParameterSet = tuple  # tuple[LayerParams, ...]
# Ensembles carry one ParameterSet per member.
Params = Union[ParameterSet, "tuple[ParameterSet, ...]"]

FLIPOUT_LOGVAR_INIT = -6.0


@dataclass(frozen=True, eq=False)
class PassRealization:
    """One frozen stochastic instantiation of the network.

    ``unit_masks`` hold 0/1 dropout masks over each stochastic layer's
    input units; ``weight_masks`` hold 0/1 dropconnect masks over weights;
    ``weight_eps`` holds the flipout standard-normal draws
    ``(eps_weight, eps_bias)``; ``member`` selects an ensemble member.
    Inverted scaling by ``1/(1-p)`` is applied when the realization is
    turned into effective weights, not stored in the masks.
    """

    kind: str
    unit_masks: Mapping[int, np.ndarray] = field(default_factory=dict)
    weight_masks: Mapping[int, np.ndarray] = field(default_factory=dict)
    weight_eps: Mapping[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    member: int | None = None


IDENTITY_REALIZATION = PassRealization("none")


def init_parameters(spec: ModelSpec, rng: RngStream) -> ParameterSet:
    """Fan-in-scaled Gaussian weights, zero biases.

    Layers followed by ReLU use std ``sqrt(2/fan_in)``, the linear output
    layer ``sqrt(1/fan_in)``.  Flipout layers get this init as posterior
    mean and a small constant log-variance.
    """
    widths = spec.layer_widths
    layers = []
    for l in range(spec.n_layers):
        din, dout = widths[l], widths[l + 1]
        has_relu = l < spec.n_layers - 1
        std = np.sqrt((2.0 if has_relu else 1.0) / din)
        w = rng.standard_normal((dout, din)) * std
        b = np.zeros(dout)
        if spec.eu.kind == "flipout" and l in spec.stochastic_range:
            layers.append(
                FlipoutParams(
                    weight_mu=w,
                    weight_logvar=np.full((dout, din), FLIPOUT_LOGVAR_INIT),
                    bias_mu=b,
                    bias_logvar=np.full(dout, FLIPOUT_LOGVAR_INIT),
                )
            )
        else:
            layers.append(DenseParams(weight=w, bias=b))
    return tuple(layers)


def init_model(spec: ModelSpec, rng: RngStream) -> Params:
    """Initialize all parameters a spec needs (every member for ensembles)."""
    if spec.eu.kind == "ensemble":
        return tuple(
            init_parameters(spec, rng.child("member", i)) for i in range(spec.eu.members)
        )
    return init_parameters(spec, rng)


def resolve_member(spec: ModelSpec, params: Params, real: PassRealization) -> ParameterSet:
    """Pick the ParameterSet a realization refers to."""
    if spec.eu.kind == "ensemble":
        if real.member is None:
            raise ValueError("ensemble evaluation needs a realization with a member index")
        return params[real.member]
    return params


def sample_realization(spec: ModelSpec, rng: RngStream) -> PassRealization:
    """Draw one independent stochastic realization of the model.

    Dropout zeroes each input unit of a stochastic layer with probability
    ``p``; dropconnect zeroes individual weights with probability ``p``;
    flipout draws a reparameterized weight perturbation; ensembles cycle
    member indices round-robin with the stream's draw counter.  With EU
    method ``none`` the realization is the identity.
    """
    kind = spec.eu.kind
    if kind == "none":
        return IDENTITY_REALIZATION
    if kind == "mc-dropout":
        masks = {
            l: (rng.random(spec.layer_widths[l]) >= spec.eu.drop_p).astype(np.float64)
            for l in spec.stochastic_range
        }
        return PassRealization(kind, unit_masks=masks)
    if kind == "mc-dropconnect":
        masks = {
            l: (
                rng.random((spec.layer_widths[l + 1], spec.layer_widths[l])) >= spec.eu.drop_p
            ).astype(np.float64)
            for l in spec.stochastic_range
        }
        return PassRealization(kind, weight_masks=masks)
    if kind == "flipout":
        eps = {
            l: (
                rng.standard_normal((spec.layer_widths[l + 1], spec.layer_widths[l])),
                rng.standard_normal(spec.layer_widths[l + 1]),
            )
            for l in spec.stochastic_range
        }
        return PassRealization(kind, weight_eps=eps)
    if kind == "ensemble":
        return PassRealization(kind, member=rng.next_index() % spec.eu.members)
    raise AssertionError(kind)


def _effective_dense(spec, layer_idx, p: LayerParams, real: PassRealization):
    """Effective (weight, bias) of one layer under a realization."""
    if isinstance(p, FlipoutParams):
        if layer_idx in real.weight_eps:
            eps_w, eps_b = real.weight_eps[layer_idx]
            w = p.weight_mu + np.exp(0.5 * p.weight_logvar) * eps_w
            b = p.bias_mu + np.exp(0.5 * p.bias_logvar) * eps_b
        else:
            w, b = p.weight_mu, p.bias_mu  # posterior mean
        return w, b
    w, b = p.weight, p.bias
    if layer_idx in real.weight_masks:
        w = w * real.weight_masks[layer_idx] / (1.0 - spec.eu.drop_p)
    return w, b


def realize_layers(spec: ModelSpec, params: Params, real: PassRealization) -> list:
    """Kernel-ready layer stack ``[(W, b, in_mask, relu), ...]`` for one pass."""
    member = resolve_member(spec, params, real)
    keep = 1.0 - spec.eu.drop_p
    layers = []
    for l in range(spec.n_layers):
        w, b = _effective_dense(spec, l, member[l], real)
        mask = real.unit_masks.get(l)
        if mask is not None:
            mask = mask / keep
        layers.append((w, b, mask, l < spec.n_layers - 1))
    return layers


def realize_layers_batch(
    spec: ModelSpec, params: Params, reals: Sequence[PassRealization]
) -> list:
    """Layer stack for many realizations at once.

    Arrays gain a leading batch axis only where realizations actually
    differ (per-pass masks or weights); everything else stays shared so the
    kernels can skip per-sample indexing.
    """
    kind = spec.eu.kind
    if kind == "none" or len(reals) == 1:
        return realize_layers(spec, params, reals[0])
    n_layers = spec.n_layers
    keep = 1.0 - spec.eu.drop_p

    if kind == "ensemble":
        idx = [r.member for r in reals]
        if any(i is None for i in idx):
            raise ValueError("ensemble realizations need member indices")
        if len(set(idx)) == 1:
            return realize_layers(spec, params, reals[0])
        idx = np.asarray(idx)
        layers = []
        for l in range(n_layers):
            ws = np.stack([m[l].weight for m in params])[idx]
            bs = np.stack([m[l].bias for m in params])[idx]
            layers.append((ws, bs, None, l < n_layers - 1))
        return layers

    layers = []
    for l in range(n_layers):
        p = params[l]
        mask = None
        if kind == "mc-dropout":
            w, b = p.weight, p.bias
            if l in spec.stochastic_range:
                mask = np.stack([r.unit_masks[l] for r in reals]) / keep
        elif kind == "mc-dropconnect":
            w, b = p.weight, p.bias
            if l in spec.stochastic_range:
                w = w * np.stack([r.weight_masks[l] for r in reals]) / keep
        elif kind == "flipout":
            if l in spec.stochastic_range:
                std_w = np.exp(0.5 * p.weight_logvar)
                std_b = np.exp(0.5 * p.bias_logvar)
                w = p.weight_mu + std_w * np.stack([r.weight_eps[l][0] for r in reals])
                b = p.bias_mu + std_b * np.stack([r.weight_eps[l][1] for r in reals])
            else:
                w, b = p.weight, p.bias
        else:
            raise AssertionError(kind)
        layers.append((w, b, mask, l < n_layers - 1))
    return layers


@dataclass(frozen=True, eq=False)
class JacobianResult:
    """Exact Jacobian of a realized network at one input, plus its output."""

    jacobian: np.ndarray  # (out_dim, in_dim)
    output: np.ndarray  # (out_dim,)


def forward(spec: ModelSpec, params: Params, real: PassRealization, x) -> np.ndarray:
    """Evaluate the realized network at one input vector."""
    x = as_vector(x, "x")
    if x.shape[0] != spec.input_dim:
        raise ValueError(f"input has length {x.shape[0]}, expected {spec.input_dim}")
    layers = realize_layers(spec, params, real)
    return backend.forward_batch(layers, x[None, :])[0]


def jacobian(spec: ModelSpec, params: Params, real: PassRealization, x) -> JacobianResult:
    """Exact input Jacobian of the realized network at ``x``.

    Computed layerwise (weight matrices times diagonal ReLU-derivative
    masks), so it is exact up to rounding; the ReLU derivative at a kink is
    taken as zero.
    """
    x = as_vector(x, "x")
    if x.shape[0] != spec.input_dim:
        raise ValueError(f"input has length {x.shape[0]}, expected {spec.input_dim}")
    layers = realize_layers(spec, params, real)
    out, jac = backend.jacobian_batch(layers, x[None, :])
    return JacobianResult(jacobian=jac[0], output=out[0])


# --------------------------------------------------------------------------
# training-oriented forward/backward (plain NumPy, batched over samples)
# --------------------------------------------------------------------------


def forward_with_cache(spec: ModelSpec, params: Params, real: PassRealization, xs):
    """Batched forward pass keeping the per-layer values backprop needs."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != spec.input_dim:
        raise ValueError(f"xs must be (batch, {spec.input_dim})")
    layers = realize_layers(spec, params, real)
    h = xs
    cache = []
    for w, b, mask, relu in layers:
        h_in = h if mask is None else h * mask
        z = h_in @ w.T + b
        cache.append((h_in, z, w, mask, relu))
        h = np.maximum(z, 0.0) if relu else z
    return h, cache


def backward_from_cache(
    spec: ModelSpec, params: Params, real: PassRealization, cache, d_out
) -> list[dict[str, np.ndarray]]:
    """Gradients of a scalar loss w.r.t. every raw parameter.

    ``d_out`` is the loss gradient at the network output, one row per batch
    sample (already including any 1/batch factor).  Returns one dict per
    layer, keyed like the layer's ``arrays()``; flipout layers get
    posterior-mean and log-variance gradients through the frozen
    reparameterized draw.
    """
    member = resolve_member(spec, params, real)
    keep = 1.0 - spec.eu.drop_p
    g = np.asarray(d_out, dtype=np.float64)
    grads: list = [None] * spec.n_layers
    for l in reversed(range(spec.n_layers)):
        h_in, z, w_eff, mask, relu = cache[l]
        if relu:
            g = g * (z > 0.0)
        dw_eff = g.T @ h_in
        db_eff = g.sum(axis=0)
        if l > 0:
            g = g @ w_eff
            if mask is not None:
                g = g * mask
        p = member[l]
        if isinstance(p, FlipoutParams):
            if l in real.weight_eps:
                eps_w, eps_b = real.weight_eps[l]
                grads[l] = {
                    "weight_mu": dw_eff,
                    "weight_logvar": dw_eff * eps_w * 0.5 * np.exp(0.5 * p.weight_logvar),
                    "bias_mu": db_eff,
                    "bias_logvar": db_eff * eps_b * 0.5 * np.exp(0.5 * p.bias_logvar),
                }
            else:
                grads[l] = {
                    "weight_mu": dw_eff,
                    "weight_logvar": np.zeros_like(p.weight_logvar),
                    "bias_mu": db_eff,
                    "bias_logvar": np.zeros_like(p.bias_logvar),
                }
        else:
            dw = dw_eff
            if l in real.weight_masks:
                dw = dw_eff * real.weight_masks[l] / keep
            grads[l] = {"weight": dw, "bias": db_eff}
    return grads


def backward(
    spec: ModelSpec, params: Params, real: PassRealization, x, upstream
) -> list[dict[str, np.ndarray]]:
    """Parameter gradients for a single input and upstream loss gradient."""
    upstream = as_vector(upstream, "upstream")
    if upstream.shape[0] != spec.output_dim:
        raise ValueError(
            f"upstream gradient has length {upstream.shape[0]}, expected {spec.output_dim}"
        )
    x = as_vector(x, "x")
    _, cache = forward_with_cache(spec, params, real, x[None, :])
    return backward_from_cache(spec, params, real, cache, upstream[None, :])


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "uniunc-model"
_CHECKPOINT_VERSION = 1


def _layer_to_dict(p: LayerParams) -> dict:
    d = {k: v.tolist() for k, v in p.arrays().items()}
    d["type"] = "flipout" if isinstance(p, FlipoutParams) else "dense"
    return d


def _layer_from_dict(d: Mapping) -> LayerParams:
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in d.items() if k != "type"}
    cls = FlipoutParams if d["type"] == "flipout" else DenseParams
    return cls.from_arrays(arrays)


def save_model(path, spec: ModelSpec, params: Params) -> None:
    """Write spec and parameters (all members) to a JSON checkpoint.

    Floats are serialized with shortest round-trip repr, so a load returns
    bit-identical arrays.
    """
    members = params if spec.eu.kind == "ensemble" else (params,)
    doc = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "members": [[_layer_to_dict(p) for p in member] for member in members],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_model(path) -> tuple[ModelSpec, Params]:
    """Load a checkpoint written by :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    if doc.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    spec = ModelSpec.from_dict(doc["spec"])
    members = tuple(
        tuple(_layer_from_dict(layer) for layer in member) for member in doc["members"]
    )
    if spec.eu.kind == "ensemble":
        if len(members) != spec.eu.members:
            raise ValueError(f"{path}: expected {spec.eu.members} members, found {len(members)}")
        return spec, members
    if len(members) != 1:
        raise ValueError(f"{path}: expected a single member, found {len(members)}")
    return spec, members[0]
