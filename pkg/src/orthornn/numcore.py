"""Dense linear algebra primitives, activations with derivatives, seeded RNG.

Everything downstream (rotation plans, cells, BPTT) is built on plain
float ndarrays and the helpers in this module.  All functions are pure;
randomness only flows through an explicit `Prng` handle.
"""

from __future__ import annotations

import numpy as np

ACTIVATION_KINDS = ("sigmoid", "tanh", "relu", "modrelu")


class Prng:
    """Deterministic random stream: a PCG64 generator under a fixed seed.

    PCG64 is a documented 64-bit generator whose output stream is stable
    across platforms for a given seed, which is what makes task generation
    and weight init reproducible bit-for-bit.  No global state: every
    consumer takes a handle.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        """`n` i.i.d. uniform draws in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"uniform bounds must satisfy lo < hi, got [{lo}, {hi})")
        if n < 0:
            raise ValueError("n must be >= 0")
        return self._gen.uniform(lo, hi, size=n)

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """`n` i.i.d. integer draws in [lo, hi)."""
        if not lo < hi:
            raise ValueError(f"integer bounds must satisfy lo < hi, got [{lo}, {hi})")
        return self._gen.integers(lo, hi, size=n)

    def choice_no_replace(self, n: int, k: int) -> np.ndarray:
        """`k` distinct indices from range(n), uniform over subsets."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from range({n})")
        return self._gen.choice(n, size=k, replace=False)

    def random(self, *shape) -> np.ndarray:
        """Uniform [0, 1) array of the given shape."""
        return self._gen.random(size=shape)


def rng_uniform(rng: Prng, lo: float, hi: float, n: int) -> np.ndarray:
    return rng.uniform(lo, hi, n)


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """W @ x + b with explicit shape validation.

    Accepts a single vector x of shape (cols,) or a batch (B, cols); the
    batched form returns (B, rows).
    """
    W = np.asarray(W)
    x = np.asarray(x)
    b = np.asarray(b)
    if W.ndim != 2:
        raise ValueError(f"W must be 2-D, got shape {W.shape}")
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"affine: W has {W.shape[1]} columns but x has length {x.shape[-1]}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"affine: b has shape {b.shape}, expected ({W.shape[0]},)")
    return x @ W.T + b


def sigmoid(v):
    # piecewise form avoids overflow in exp for large |v|
    v = np.asarray(v)
    out = np.empty_like(v, dtype=v.dtype)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def modrelu(v: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """sign(v) * relu(|v| + bias), with value 0 at v == 0.

    Real specialization of the magnitude-thresholded rectifier: the
    magnitude |v| is shifted by a learned bias and rectified while the
    sign is preserved.
    """
    v = np.asarray(v)
    bias = np.asarray(bias)
    mag = np.abs(v) + bias
    return np.sign(v) * np.maximum(mag, 0.0)


def modrelu_grad(v: np.ndarray, bias: np.ndarray):
    """Partials of modrelu wrt v and bias; 0 at kinks (|v|+b = 0 and v = 0)."""
    v = np.asarray(v)
    active = (np.abs(v) + bias) > 0.0
    sgn = np.sign(v)
    dv = np.where(active & (sgn != 0), 1.0, 0.0)
    db = np.where(active, sgn, 0.0)
    return dv, db


def activation(kind: str, v: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Elementwise activation; `bias` is required for (and only for) modrelu."""
    if kind == "modrelu":
        if bias is None:
            raise ValueError("modrelu requires a bias vector")
        if np.shape(bias) != np.shape(v)[-1:]:
            raise ValueError(f"modrelu bias shape {np.shape(bias)} does not match input {np.shape(v)}")
        return modrelu(v, bias)
    if bias is not None:
        raise ValueError(f"activation '{kind}' takes no bias")
    if kind == "sigmoid":
        return sigmoid(v)
    if kind == "tanh":
        return np.tanh(v)
    if kind == "relu":
        return np.maximum(np.asarray(v), 0.0)
    raise ValueError(f"unknown activation kind '{kind}'")


def activation_deriv(kind: str, v: np.ndarray, bias: np.ndarray | None = None):
    """Derivative paired with `activation`.

    Returns (d/dv, d/dbias); the bias slot is None for every kind except
    modrelu.  Subgradient convention: 0 exactly at kinks.
    """
    if kind == "modrelu":
        if bias is None:
            raise ValueError("modrelu requires a bias vector")
        return modrelu_grad(v, bias)
    if kind == "sigmoid":
        s = sigmoid(v)
        return s * (1.0 - s), None
    if kind == "tanh":
        t = np.tanh(v)
        return 1.0 - t * t, None
    if kind == "relu":
        return np.where(np.asarray(v) > 0.0, 1.0, 0.0), None
    raise ValueError(f"unknown activation kind '{kind}'")


def onehot(tokens: np.ndarray, width: int, dtype=np.float64) -> np.ndarray:
    """Token indices (any shape) -> one-hot vectors along a trailing axis."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= width):
        raise ValueError(f"token out of range for one-hot width {width}")
    return np.eye(width, dtype=dtype)[tokens]
