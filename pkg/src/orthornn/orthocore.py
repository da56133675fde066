"""Trainable orthogonal matrices as layered products of disjoint 2x2 rotations.

A `RotationPlan` holds a fixed pairing structure (which coordinates each
layer rotates) plus one angle per pair.  The induced dense matrix is
orthogonal for *every* angle assignment, so there is no re-orthogonalization
step anywhere: norm preservation is exact up to roundoff.

Two evaluation paths exist:
  * `apply` / `rotation_backward` walk the layers directly, O(dim * layers)
    per vector, with O(dim) extra memory.
  * `DenseRotation` materializes the dense matrix once (plus the prefix
    products of the layers) so that a long sequence can use one BLAS matmul
    per timestep; the accumulated dense-matrix gradient is converted back
    to per-angle gradients once, via the product rule over the layers.
Both paths compute the same function and the same gradients to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numcore import Prng

LAYOUTS = ("full", "fft")


def _adjacent_layers(dim: int, n_layers: int) -> list[np.ndarray]:
    """Alternating even-start / odd-start adjacent pairings, n_layers deep."""
    layers = []
    for k in range(n_layers):
        start = k % 2
        pairs = [(p, p + 1) for p in range(start, dim - 1, 2)]
        layers.append(np.array(pairs, dtype=np.int64).reshape(-1, 2))
    return layers

def _butterfly_layers(dim: int) -> list[np.ndarray]:
    """Stride-doubling pairing: layer k joins indices differing in bit k."""
    n_layers = int(math.log2(dim))
    layers = []
    for k in range(n_layers):
        stride = 1 << k
        pairs = [(i, i + stride) for i in range(dim) if (i >> k) & 1 == 0]
        layers.append(np.array(pairs, dtype=np.int64))
    return layers


@dataclass
class RotationPlan:
    """Pairing structure + flat angle vector of a layered rotation product.

    Layers are applied in list order: layer 0 touches the input first, so
    the dense equivalent is U = R_(L-1) @ ... @ R_1 @ R_0.
    """

    dim: int
    layout: str
    pairs: list[np.ndarray]          # per layer: (n_pairs, 2) int, disjoint rows
    angles: np.ndarray               # flat, concatenated in layer order
    offsets: np.ndarray              # angle-slice start per layer, len L+1
    _perms: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._perms:
            for p in self.pairs:
                perm = np.arange(self.dim, dtype=np.int64)
                if len(p):
                    perm[p[:, 0]] = p[:, 1]
                    perm[p[:, 1]] = p[:, 0]
                self._perms.append(perm)

    @property
    def n_layers(self) -> int:
        return len(self.pairs)

    @property
    def n_angles(self) -> int:
        return self.angles.size

    def layer_angles(self, k: int) -> np.ndarray:
        return self.angles[self.offsets[k]:self.offsets[k + 1]]

    def astype(self, dtype) -> "RotationPlan":
        return RotationPlan(self.dim, self.layout, self.pairs,
                            self.angles.astype(dtype), self.offsets, self._perms)

    def copy(self) -> "RotationPlan":
        return RotationPlan(self.dim, self.layout, self.pairs,
                            self.angles.copy(), self.offsets, self._perms)


def plan_new(dim: int, layout: str, rng: Prng) -> RotationPlan:
    """Build a plan with angles drawn i.i.d. uniform in [-pi, pi).

    `layout` is "full" (dim layers, spans all of SO(dim)), "fft"
    (log2(dim) stride-doubling layers), or an integer string giving a
    custom number of alternating adjacent layers.
    """
    if dim < 2:
        raise ValueError(f"rotation plan needs dim >= 2, got {dim}")
    if layout == "full":
        if dim % 2:
            raise ValueError(f"'full' layout requires even dim, got {dim}")
        pairs = _adjacent_layers(dim, dim)
    elif layout == "fft":
        if dim & (dim - 1):
            raise ValueError(f"'fft' layout requires a power-of-two dim, got {dim}")
        pairs = _butterfly_layers(dim)
    else:
        try:
            n_layers = int(layout)
        except ValueError:
            raise ValueError(f"unknown rotation layout '{layout}'") from None
        if n_layers < 1:
            raise ValueError(f"custom layer count must be >= 1, got {layout}")
        pairs = _adjacent_layers(dim, n_layers)
    offsets = np.cumsum([0] + [len(p) for p in pairs])
    angles = rng.uniform(-math.pi, math.pi, int(offsets[-1]))
    return RotationPlan(dim, layout, pairs, angles, offsets)


def _layer_coeffs(plan: RotationPlan, k: int, transpose: bool = False):
    """Per-coordinate (cos, signed-sin) vectors of layer k.

    The layer maps x -> c * x + s * x[perm]; `transpose` negates the angle,
    which is the inverse because each layer is orthogonal.
    """
    th = plan.layer_angles(k)
    c = np.cos(th)
    s = np.sin(th)
    if transpose:
        s = -s
    cvec = np.ones(plan.dim, dtype=plan.angles.dtype)
    svec = np.zeros(plan.dim, dtype=plan.angles.dtype)
    p = plan.pairs[k]
    if len(p):
        cvec[p[:, 0]] = c
        cvec[p[:, 1]] = c
        svec[p[:, 0]] = -s
        svec[p[:, 1]] = s
    return cvec, svec


def apply(plan: RotationPlan, x: np.ndarray) -> np.ndarray:
    """U @ x along the last axis of x; leading axes are batch dimensions."""
    x = np.asarray(x)
    if x.shape[-1] != plan.dim:
        raise ValueError(f"apply: plan dim {plan.dim} vs vector length {x.shape[-1]}")
    y = x
    for k in range(plan.n_layers):
        cvec, svec = _layer_coeffs(plan, k)
        y = cvec * y + svec * y[..., plan._perms[k]]
    return y


def apply_transpose(plan: RotationPlan, y: np.ndarray) -> np.ndarray:
    """U.T @ y (= the inverse of `apply`) along the last axis."""
    y = np.asarray(y)
    if y.shape[-1] != plan.dim:
        raise ValueError(f"apply_transpose: plan dim {plan.dim} vs vector length {y.shape[-1]}")
    x = y
    for k in reversed(range(plan.n_layers)):
        cvec, svec = _layer_coeffs(plan, k, transpose=True)
        x = cvec * x + svec * x[..., plan._perms[k]]
    return x


def to_dense(plan: RotationPlan) -> np.ndarray:
    """Dense dim x dim matrix equal to the ordered product of all layers."""
    # row b of apply(plan, I) is U @ e_b, i.e. column b of U
    return np.ascontiguousarray(apply(plan, np.eye(plan.dim, dtype=plan.angles.dtype)).T)


def rotation_backward(plan: RotationPlan, x: np.ndarray, grad_y: np.ndarray):
    """Reverse-mode through y = apply(plan, x).

    Returns (grad_x, grad_angles) where grad_x = U.T @ grad_y.  Walks the
    layers backwards, un-rotating the cached output to recover each layer's
    input, so extra memory stays O(dim) regardless of depth.
    """
    x = np.asarray(x)
    grad_y = np.asarray(grad_y)
    if x.shape != grad_y.shape or x.shape[-1] != plan.dim:
        raise ValueError(
            f"rotation_backward: shapes {x.shape} / {grad_y.shape} vs plan dim {plan.dim}")
    return _backward_from_output(plan, apply(plan, x), grad_y)


def _backward_from_output(plan: RotationPlan, y: np.ndarray, grad_y: np.ndarray):
    grad_theta = np.zeros(plan.n_angles, dtype=plan.angles.dtype)
    g = grad_y
    out = y
    for k in reversed(range(plan.n_layers)):
        p = plan.pairs[k]
        cvec, svec = _layer_coeffs(plan, k, transpose=True)
        perm = plan._perms[k]
        x_k = cvec * out + svec * out[..., perm]   # layer input
        if len(p):
            th = plan.layer_angles(k)
            c, s = np.cos(th), np.sin(th)
            xi = x_k[..., p[:, 0]]
            xj = x_k[..., p[:, 1]]
            gi = g[..., p[:, 0]]
            gj = g[..., p[:, 1]]
            # d/dtheta of [c*xi - s*xj, s*xi + c*xj] dotted with (gi, gj)
            dth = gi * (-s * xi - c * xj) + gj * (c * xi - s * xj)
            if dth.ndim > 1:
                dth = dth.reshape(-1, len(p)).sum(axis=0)
            grad_theta[plan.offsets[k]:plan.offsets[k + 1]] = dth
        g = cvec * g + svec * g[..., perm]
        out = x_k
    return g, grad_theta


class DenseRotation:
    """Materialized rotation product for sequence-level training.

    Forward: `uh = h @ ctx.U.T` per timestep (one matmul).  Backward:
    callers accumulate the dense-matrix gradient with `accumulate(grad_uh,
    h)` and propagate `grad_h = grad_uh @ ctx.U`; `finish()` converts the
    accumulated dense gradient into per-angle gradients using the cached
    prefix products of the layers.
    """

    def __init__(self, plan: RotationPlan):
        self.plan = plan
        dtype = plan.angles.dtype
        # prefixes[k] = (R_(k-1) ... R_0)^T ; prefixes[L] = U^T
        acc = np.eye(plan.dim, dtype=dtype)
        self.prefixes = [acc]
        for k in range(plan.n_layers):
            cvec, svec = _layer_coeffs(plan, k)
            acc = cvec * acc + svec * acc[..., plan._perms[k]]
            self.prefixes.append(acc)
        self.U = np.ascontiguousarray(self.prefixes[-1].T)
        self.grad_U = np.zeros((plan.dim, plan.dim), dtype=dtype)

    def accumulate(self, grad_uh: np.ndarray, h: np.ndarray) -> None:
        """Add the contribution of one timestep: uh = h @ U.T."""
        self.grad_U += grad_uh.T @ h

    def finish(self) -> np.ndarray:
        """Per-angle gradients of everything accumulated into grad_U."""
        plan = self.plan
        grad_theta = np.zeros(plan.n_angles, dtype=plan.angles.dtype)
        M = self.grad_U  # becomes (R_(L-1)...R_(k+1))^T @ grad_U as k descends
        for k in reversed(range(plan.n_layers)):
            p = plan.pairs[k]
            if len(p):
                # of A = M @ prefixes[k] only the four entries touching each
                # pair (i, j) enter the Frobenius product with dR_k/dtheta
                PT = self.prefixes[k].T
                Mi, Mj = M[p[:, 0]], M[p[:, 1]]
                Pi, Pj = PT[p[:, 0]], PT[p[:, 1]]
                ii = np.einsum("md,md->m", Mi, Pi)
                ij = np.einsum("md,md->m", Mi, Pj)
                ji = np.einsum("md,md->m", Mj, Pi)
                jj = np.einsum("md,md->m", Mj, Pj)
                th = plan.layer_angles(k)
                c, s = np.cos(th), np.sin(th)
                grad_theta[plan.offsets[k]:plan.offsets[k + 1]] = (
                    -s * ii - c * ij + c * ji - s * jj)
            # M <- R_k^T @ M, computed as (M^T @ R_k)^T via the layer primitive
            cvec, svec = _layer_coeffs(plan, k, transpose=True)
            MT = M.T
            M = (cvec * MT + svec * MT[..., plan._perms[k]]).T
        return grad_theta
