"""NumPy implementation of the batched MLP kernels.

This is the fallback backend used when the compiled extension is not built;
``uniunc.backend`` picks between the two at import time.  Both backends share
one contract:

* ``layers`` is a list of ``(weight, bias, in_mask, relu)`` tuples describing
  an already-realized network (dropout/dropconnect scaling and sampled
  weights folded in).  ``weight`` is ``(out, in)`` when shared across the
  batch or ``(B, out, in)`` when per-sample; ``bias`` is ``(out,)`` or
  ``(B, out)``; ``in_mask`` multiplies the layer input and is ``None``,
  ``(in,)`` or ``(B, in)``; ``relu`` applies ReLU after the affine step.
* ``xs`` is the ``(B, d_in)`` input batch.

The ReLU derivative at exactly zero is taken to be zero.
"""

from __future__ import annotations

import numpy as np


def _check_layers(layers, xs):
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2:
        raise ValueError(f"xs must be (batch, features), got shape {xs.shape}")
    b, width = xs.shape
    for idx, (w, bias, mask, _relu) in enumerate(layers):
        w = np.asarray(w)
        if w.ndim == 3 and w.shape[0] != b:
            raise ValueError(f"layer {idx}: per-sample weights expect batch {b}, got {w.shape[0]}")
        if w.ndim not in (2, 3):
            raise ValueError(f"layer {idx}: weight must be 2-D or 3-D, got {w.ndim}-D")
        din, dout = w.shape[-1], w.shape[-2]
        if din != width:
            raise ValueError(f"layer {idx}: expects {din} inputs, previous width is {width}")
        bias = np.asarray(bias)
        if bias.shape[-1] != dout or bias.ndim not in (1, 2):
            raise ValueError(f"layer {idx}: bias shape {bias.shape} does not match {dout} outputs")
        if mask is not None and np.asarray(mask).shape[-1] != din:
            raise ValueError(f"layer {idx}: mask shape does not match {din} inputs")
        width = dout
    return xs


def forward_batch(layers, xs) -> np.ndarray:
    """Run the realized layer stack over a batch of inputs."""
    h = _check_layers(layers, xs)
    for w, bias, mask, relu in layers:
        w = np.asarray(w, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if mask is not None:
            h = h * np.asarray(mask, dtype=np.float64)
        if w.ndim == 2:
            z = h @ w.T
        else:
            z = np.einsum("boi,bi->bo", w, h)
        z = z + bias
        h = np.maximum(z, 0.0) if relu else z
    return h


def jacobian_batch(layers, xs) -> tuple[np.ndarray, np.ndarray]:
    """Outputs and exact input Jacobians for a batch of inputs.

    Returns ``(out, jac)`` with ``out`` of shape ``(B, d_out)`` and ``jac``
    of shape ``(B, d_out, d_in)``; ``jac[s]`` is the derivative of the
    realized network at ``xs[s]``.
    """
    h = _check_layers(layers, xs)
    n, d0 = h.shape
    jac = np.broadcast_to(np.eye(d0), (n, d0, d0)).copy()
    for w, bias, mask, relu in layers:
        w = np.asarray(w, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if mask is not None:
            m = np.asarray(mask, dtype=np.float64)
            h = h * m
            m2 = m if m.ndim == 2 else m[None, :]
            jac = jac * m2[:, :, None]
        if w.ndim == 2:
            z = h @ w.T
            jac = np.einsum("oi,bid->bod", w, jac)
        else:
            z = np.einsum("boi,bi->bo", w, h)
            jac = np.einsum("boi,bid->bod", w, jac)
        z = z + bias
        if relu:
            h = np.maximum(z, 0.0)
            jac = jac * (z > 0.0)[:, :, None]
        else:
            h = z
    return h, jac
