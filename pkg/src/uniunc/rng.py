"""Deterministic, splittable random number streams.

Every stochastic draw in the library goes through an :class:`RngStream`, a
counter-based Philox generator keyed by ``(seed, stream_id)``.  The same key
produces the same sample sequence on every run and platform, and distinct
stream ids give statistically independent streams, so independent work units
(grid points, ensemble members, experiment cells) each get their own derived
child stream and can be evaluated in any order without changing results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _fold64(stream_id: int, path: tuple) -> int:
    """Hash ``(stream_id, *path)`` into a new 64-bit stream id.

    Path elements may be ints or strings; the encoding is fixed so derived
    ids are stable across runs and platforms.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(stream_id).to_bytes(8, "little"))
    for part in path:
        if isinstance(part, bool) or not isinstance(part, (int, str)):
            raise TypeError(f"stream path parts must be int or str, got {part!r}")
        if isinstance(part, int):
            h.update(b"i")
            h.update((part & _MASK64).to_bytes(8, "little"))
        else:
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
    return int.from_bytes(h.digest(), "little")


def derive_seed(seed: int, *path: int | str) -> int:
    """Derive a stable 64-bit integer from ``seed`` and a label path.

    Used where an API takes a plain integer seed (dataset generators,
    training configs) but several independent seeds must be produced from
    one experiment seed.
    """
    return _fold64(int(seed) & _MASK64, path)


class RngStream:
    """One independent random stream, identified by ``(seed, stream_id)``.

    Parameters
    ----------
    seed : int
        Base seed shared by all streams of one experiment.
    stream_id : int, optional
        Stream selector.  Streams with distinct ids are independent.

    Notes
    -----
    The underlying generator is Philox (counter-based), keyed with the two
    64-bit words ``(seed, stream_id)``.  Instances carry mutable counter
    state; to hand randomness to parallel workers, derive one child per
    worker with :meth:`child` instead of sharing a stream.
    """

    __slots__ = ("seed", "stream_id", "_gen", "_draw_index")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._draw_index = 0

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, *path: int | str) -> "RngStream":
        """Return an independent stream derived from this one.

        The child's id is a hash of this stream's id and ``path``, so the
        same path always yields the same child regardless of how much has
        been drawn from the parent.
        """
        return RngStream(self.seed, _fold64(self.stream_id, path))

    def next_index(self) -> int:
        """Return 0, 1, 2, ... on successive calls.

        Round-robin selector used for cycling ensemble members; part of the
        stream's counter state rather than its random sequence.
        """
        i = self._draw_index
        self._draw_index += 1
        return i

    # thin draw wrappers -------------------------------------------------

    def random(self, size=None):
        """Uniform doubles on [0, 1)."""
        return self._gen.random(size=size)

    def standard_normal(self, size=None):
        """Standard normal draws."""
        return self._gen.standard_normal(size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        """Normal draws with given mean and standard deviation."""
        return self._gen.normal(loc=loc, scale=scale, size=size)

    def integers(self, low, high=None, size=None):
        """Integer draws, half-open interval semantics of numpy."""
        return self._gen.integers(low, high=high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        """A random permutation of ``range(n)``."""
        return self._gen.permutation(n)


def gaussian(rng: RngStream, mu, var, n: int) -> np.ndarray:
    """Draw ``n`` vectors from a diagonal Gaussian.

    Parameters
    ----------
    rng : RngStream
        Stream the draws are taken from.
    mu, var : array_like
        Per-feature mean and variance, same length.  Variances must be
        non-negative; zero variance makes the corresponding feature equal
        ``mu`` exactly in every draw.
    n : int
        Number of draws, at least 1.

    Returns
    -------
    ndarray of shape (n, len(mu)), one draw per row.
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if mu.ndim != 1 or var.ndim != 1 or mu.shape != var.shape:
        raise ValueError("mu and var must be 1-D arrays of the same length")
    if np.any(var < 0.0):
        raise ValueError("variances must be non-negative")
    if n < 1:
        raise ValueError("need at least one draw")
    eps = rng.standard_normal((n, mu.shape[0]))
    return mu + np.sqrt(var) * eps
