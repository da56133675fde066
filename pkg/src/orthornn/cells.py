"""Recurrent cell kinds with exact reverse-mode gradients.

One step of each cell, on batched rows h (B, d_h), x (B, d_x):

    vanilla    h' = tanh(W_h h + W_x x + b)
    gru        z  = sigmoid(W_z [h, x] + b_z)
               r  = sigmoid(W_r [h, x] + b_r)
               h' = z*h + (1-z)*tanh(W_x x + r*(W_h h) + b_h)
    lstm       i, f, o = sigmoid(W_* [h, x] + b_*), g = tanh(W_c [h, x] + b_c)
               c' = f*c + i*g ;  h' = o*tanh(c')
    ortho_rnn  h' = modrelu(U h + W_x x, b_h)           U orthogonal by plan
    goru       z  = sigmoid(W_z h + W_zx x + b_z)
               r  = sigmoid(W_r h + W_rx x + b_r)
               h' = z*h + (1-z)*modrelu(W_x x + r*(U h), b_h)

GORU ablations: disable_reset pins r = 1, disable_update pins z = 0
(candidate-only update); an ablated gate owns no parameters.

`cell_forward` returns a tape (dict of cached per-step activations) that
`cell_backward` consumes; gradients match central finite differences to
roundoff away from modrelu kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import orthocore
from .numcore import Prng, modrelu, modrelu_grad, sigmoid
from .orthocore import DenseRotation, RotationPlan, _adjacent_layers, _butterfly_layers

CELL_KINDS = ("vanilla", "gru", "lstm", "ortho_rnn", "goru")
ROTATION_KINDS = ("ortho_rnn", "goru")


@dataclass
class CellConfig:
    kind: str
    d_x: int
    d_h: int
    disable_reset: bool = False
    disable_update: bool = False
    layout: str = "full"
    gate_bias_init: float = 0.0

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind '{self.kind}'")
        if self.d_x < 1 or self.d_h < 1:
            raise ValueError(f"d_x and d_h must be >= 1, got {self.d_x}, {self.d_h}")
        if (self.disable_reset or self.disable_update) and self.kind != "goru":
            raise ValueError("gate ablations only apply to the goru cell")


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None   # lstm only


@dataclass
class CellParams:
    config: CellConfig
    arrays: dict[str, np.ndarray]          # includes "angles" for rotation kinds
    plan: RotationPlan | None = None       # arrays["angles"] aliases plan.angles

    def named(self) -> dict[str, np.ndarray]:
        return self.arrays

    def astype(self, dtype) -> "CellParams":
        plan = self.plan.astype(dtype) if self.plan is not None else None
        arrays = {k: v.astype(dtype) for k, v in self.arrays.items() if k != "angles"}
        if plan is not None:
            arrays = {"angles": plan.angles, **arrays}
        return CellParams(self.config, arrays, plan)

    def copy(self) -> "CellParams":
        plan = self.plan.copy() if self.plan is not None else None
        arrays = {k: v.copy() for k, v in self.arrays.items() if k != "angles"}
        if plan is not None:
            arrays = {"angles": plan.angles, **arrays}
        return CellParams(self.config, arrays, plan)


def _xavier(rng: Prng, rows: int, cols: int) -> np.ndarray:
    s = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-s, s, rows * cols).reshape(rows, cols)


def _dense_specs(config: CellConfig):
    """(name, rows, cols) of the dense weights, in init order."""
    d, dx = config.d_h, config.d_x
    if config.kind == "vanilla":
        return [("W_h", d, d), ("W_x", d, dx)]
    if config.kind == "gru":
        return [("W_z", d, d + dx), ("W_r", d, d + dx), ("W_x", d, dx), ("W_h", d, d)]
    if config.kind == "lstm":
        return [("W_i", d, d + dx), ("W_f", d, d + dx), ("W_o", d, d + dx), ("W_c", d, d + dx)]
    if config.kind == "ortho_rnn":
        return [("W_x", d, dx)]
    specs = [("W_x", d, dx)]
    if not config.disable_update:
        specs += [("W_z", d, d), ("W_zx", d, dx)]
    if not config.disable_reset:
        specs += [("W_r", d, d), ("W_rx", d, dx)]
    return specs


def _bias_specs(config: CellConfig):
    """(name, is_gate_bias) of the bias vectors, in init order."""
    if config.kind == "vanilla":
        return [("b", False)]
    if config.kind == "gru":
        return [("b_z", True), ("b_r", True), ("b_h", False)]
    if config.kind == "lstm":
        # only the forget gate gets the configurable init
        return [("b_i", False), ("b_f", True), ("b_o", False), ("b_c", False)]
    if config.kind == "ortho_rnn":
        return [("b_h", False)]
    specs = []
    if not config.disable_update:
        specs.append(("b_z", True))
    if not config.disable_reset:
        specs.append(("b_r", True))
    specs.append(("b_h", False))
    return specs


def cell_init(config: CellConfig, rng: Prng) -> CellParams:
    """Xavier-uniform dense weights, zero biases (gate biases configurable),
    rotation angles uniform in [-pi, pi)."""
    arrays: dict[str, np.ndarray] = {}
    plan = None
    if config.kind in ROTATION_KINDS:
        if config.d_h < 2:
            raise ValueError(f"{config.kind} needs d_h >= 2 for the rotation plan")
        plan = orthocore.plan_new(config.d_h, config.layout, rng)
        arrays["angles"] = plan.angles
    for name, rows, cols in _dense_specs(config):
        arrays[name] = _xavier(rng, rows, cols)
    for name, is_gate in _bias_specs(config):
        fill = config.gate_bias_init if is_gate else 0.0
        arrays[name] = np.full(config.d_h, fill, dtype=np.float64)
    return CellParams(config, arrays, plan)


def zero_state(config: CellConfig, batch: int, dtype=np.float64) -> CellState:
    h = np.zeros((batch, config.d_h), dtype=dtype)
    c = np.zeros((batch, config.d_h), dtype=dtype) if config.kind == "lstm" else None
    return CellState(h, c)


def _check_step_shapes(params: CellParams, state: CellState, x: np.ndarray):
    cfg = params.config
    if x.ndim != 2 or x.shape[1] != cfg.d_x:
        raise ValueError(f"input must be (batch, {cfg.d_x}), got {x.shape}")
    if state.h.shape != (x.shape[0], cfg.d_h):
        raise ValueError(f"state must be (batch, {cfg.d_h}), got {state.h.shape}")
    if cfg.kind == "lstm" and (state.c is None or state.c.shape != state.h.shape):
        raise ValueError("lstm state needs a cell vector c matching h")


def _rotate(params: CellParams, h: np.ndarray, rot: DenseRotation | None) -> np.ndarray:
    if rot is not None:
        return h @ rot.U.T
    return orthocore.apply(params.plan, h)


def cell_forward(params: CellParams, state: CellState, x: np.ndarray,
                 rot: DenseRotation | None = None):
    """One recurrent step.  Returns (next_state, tape).

    `rot` optionally supplies a materialized rotation matrix (shared across
    the timesteps of a sequence); without it the rotation is applied
    layer by layer.
    """
    x = np.asarray(x)
    _check_step_shapes(params, state, x)
    a = params.arrays
    cfg = params.config
    h = state.h
    tape: dict = {"x": x, "h_prev": h}

    if cfg.kind == "vanilla":
        h_new = np.tanh(h @ a["W_h"].T + x @ a["W_x"].T + a["b"])
        tape["h_new"] = h_new
        return CellState(h_new), tape

    if cfg.kind == "gru":
        hx = np.concatenate([h, x], axis=1)
        z = sigmoid(hx @ a["W_z"].T + a["b_z"])
        r = sigmoid(hx @ a["W_r"].T + a["b_r"])
        whh = h @ a["W_h"].T
        c = np.tanh(x @ a["W_x"].T + r * whh + a["b_h"])
        h_new = z * h + (1.0 - z) * c
        tape.update(z=z, r=r, whh=whh, c=c)
        return CellState(h_new), tape

    if cfg.kind == "lstm":
        hx = np.concatenate([h, x], axis=1)
        i = sigmoid(hx @ a["W_i"].T + a["b_i"])
        f = sigmoid(hx @ a["W_f"].T + a["b_f"])
        o = sigmoid(hx @ a["W_o"].T + a["b_o"])
        g = np.tanh(hx @ a["W_c"].T + a["b_c"])
        c_new = f * state.c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        tape.update(c_prev=state.c, i=i, f=f, o=o, g=g, tanh_c=tanh_c)
        return CellState(h_new, c_new), tape

    if cfg.kind == "ortho_rnn":
        uh = _rotate(params, h, rot)
        pre = uh + x @ a["W_x"].T
        h_new = modrelu(pre, a["b_h"])
        tape.update(uh=uh, pre=pre)
        return CellState(h_new), tape

    # goru
    uh = _rotate(params, h, rot)
    if cfg.disable_update:
        z = None
    else:
        z = sigmoid(h @ a["W_z"].T + x @ a["W_zx"].T + a["b_z"])
    if cfg.disable_reset:
        r = None
        cpre = x @ a["W_x"].T + uh
    else:
        r = sigmoid(h @ a["W_r"].T + x @ a["W_rx"].T + a["b_r"])
        cpre = x @ a["W_x"].T + r * uh
    c = modrelu(cpre, a["b_h"])
    h_new = c if z is None else z * h + (1.0 - z) * c
    tape.update(z=z, r=r, uh=uh, cpre=cpre, c=c)
    return CellState(h_new), tape


def _rotate_backward(params: CellParams, tape: dict, grad_uh: np.ndarray,
                     grads: dict, rot: DenseRotation | None) -> np.ndarray:
    """Gradient through uh = U h.  Returns grad wrt h."""
    if rot is not None:
        rot.accumulate(grad_uh, tape["h_prev"])
        return grad_uh @ rot.U
    gh, gtheta = orthocore._backward_from_output(params.plan, tape["uh"], grad_uh)
    grads["angles"] = grads.get("angles", 0.0) + gtheta
    return gh


def cell_backward(params: CellParams, tape: dict, grad_h: np.ndarray,
                  grad_c: np.ndarray | None = None,
                  rot: DenseRotation | None = None):
    """Exact gradients of one step wrt parameters, previous state, input.

    `grad_h` (and `grad_c` for lstm) is the loss gradient at the step's
    output state.  Parameter gradients are summed over the batch.  When
    `rot` is given, the angle gradient is accumulated into it instead of
    being returned per step (call rot.finish() once at the end).
    """
    a = params.arrays
    cfg = params.config
    x, h = tape["x"], tape["h_prev"]
    if grad_h.shape != h.shape:
        raise ValueError(f"grad_h shape {grad_h.shape} does not match state {h.shape}")
    grads: dict[str, np.ndarray] = {}

    if cfg.kind == "vanilla":
        da = grad_h * (1.0 - tape["h_new"] ** 2)
        grads["W_h"] = da.T @ h
        grads["W_x"] = da.T @ x
        grads["b"] = da.sum(axis=0)
        return grads, CellState(da @ a["W_h"]), da @ a["W_x"]

    if cfg.kind == "gru":
        z, r, whh, c = tape["z"], tape["r"], tape["whh"], tape["c"]
        hx = np.concatenate([h, x], axis=1)
        dz = grad_h * (h - c)
        dc = grad_h * (1.0 - z)
        gh = grad_h * z
        dcpre = dc * (1.0 - c * c)
        grads["W_x"] = dcpre.T @ x
        grads["b_h"] = dcpre.sum(axis=0)
        gx = dcpre @ a["W_x"]
        dwhh = dcpre * r
        grads["W_h"] = dwhh.T @ h
        gh = gh + dwhh @ a["W_h"]
        dr = dcpre * whh
        drpre = dr * r * (1.0 - r)
        dzpre = dz * z * (1.0 - z)
        grads["W_r"] = drpre.T @ hx
        grads["b_r"] = drpre.sum(axis=0)
        grads["W_z"] = dzpre.T @ hx
        grads["b_z"] = dzpre.sum(axis=0)
        ghx = drpre @ a["W_r"] + dzpre @ a["W_z"]
        d = cfg.d_h
        return grads, CellState(gh + ghx[:, :d]), gx + ghx[:, d:]

    if cfg.kind == "lstm":
        i, f, o, g = tape["i"], tape["f"], tape["o"], tape["g"]
        tanh_c = tape["tanh_c"]
        hx = np.concatenate([h, x], axis=1)
        do = grad_h * tanh_c
        dc = grad_h * o * (1.0 - tanh_c * tanh_c)
        if grad_c is not None:
            dc = dc + grad_c
        di = dc * g
        df = dc * tape["c_prev"]
        dg = dc * i
        gc_prev = dc * f
        dipre = di * i * (1.0 - i)
        dfpre = df * f * (1.0 - f)
        dopre = do * o * (1.0 - o)
        dgpre = dg * (1.0 - g * g)
        ghx = np.zeros_like(hx)
        for name, dpre in (("W_i", dipre), ("W_f", dfpre), ("W_o", dopre), ("W_c", dgpre)):
            grads[name] = dpre.T @ hx
            grads["b" + name[1:]] = dpre.sum(axis=0)
            ghx += dpre @ a[name]
        d = cfg.d_h
        return grads, CellState(ghx[:, :d], gc_prev), ghx[:, d:]

    if cfg.kind == "ortho_rnn":
        dv, db = modrelu_grad(tape["pre"], a["b_h"])
        dpre = grad_h * dv
        grads["b_h"] = (grad_h * db).sum(axis=0)
        grads["W_x"] = dpre.T @ x
        gx = dpre @ a["W_x"]
        gh = _rotate_backward(params, tape, dpre, grads, rot)
        return grads, CellState(gh), gx

    # goru
    z, r, uh, cpre, c = tape["z"], tape["r"], tape["uh"], tape["cpre"], tape["c"]
    if z is None:
        dc = grad_h
        gh = np.zeros_like(grad_h)
    else:
        dz = grad_h * (h - c)
        dc = grad_h * (1.0 - z)
        gh = grad_h * z
    dv, db = modrelu_grad(cpre, a["b_h"])
    dcpre = dc * dv
    grads["b_h"] = (dc * db).sum(axis=0)
    grads["W_x"] = dcpre.T @ x
    gx = dcpre @ a["W_x"]
    if r is None:
        duh = dcpre
    else:
        duh = dcpre * r
        dr = dcpre * uh
        drpre = dr * r * (1.0 - r)
        grads["W_r"] = drpre.T @ h
        grads["W_rx"] = drpre.T @ x
        grads["b_r"] = drpre.sum(axis=0)
        gh = gh + drpre @ a["W_r"]
        gx = gx + drpre @ a["W_rx"]
    if z is not None:
        dzpre = dz * z * (1.0 - z)
        grads["W_z"] = dzpre.T @ h
        grads["W_zx"] = dzpre.T @ x
        grads["b_z"] = dzpre.sum(axis=0)
        gh = gh + dzpre @ a["W_z"]
        gx = gx + dzpre @ a["W_zx"]
    gh = gh + _rotate_backward(params, tape, duh, grads, rot)
    return grads, CellState(gh), gx


def _n_rotation_angles(d_h: int, layout: str) -> int:
    if layout == "full":
        layers = _adjacent_layers(d_h, d_h)
    elif layout == "fft":
        layers = _butterfly_layers(d_h)
    else:
        layers = _adjacent_layers(d_h, int(layout))
    return sum(len(p) for p in layers)


def param_count(config: CellConfig):
    """(total, hidden_to_hidden) parameter counts.

    hidden_to_hidden covers only the h -> h paths: W_h blocks, the hidden
    columns of concatenated gate weights, and rotation angles.
    """
    d, dx = config.d_h, config.d_x
    total = sum(r * c for _, r, c in _dense_specs(config)) + d * len(_bias_specs(config))
    if config.kind == "vanilla":
        h2h = d * d
    elif config.kind == "gru":
        h2h = 3 * d * d
    elif config.kind == "lstm":
        h2h = 4 * d * d
    else:
        n_angles = _n_rotation_angles(d, config.layout)
        total += n_angles
        h2h = n_angles
        if config.kind == "goru":
            if not config.disable_update:
                h2h += d * d
            if not config.disable_reset:
                h2h += d * d
    return total, h2h


def match_hidden_size(kind: str, target_h2h: int, layout: str = "full",
                      d_x: int = 1, max_dim: int = 4096) -> int:
    """Smallest-gap hidden size whose hidden-to-hidden count approximates
    `target_h2h` (ties go to the smaller size)."""
    best, best_gap = None, None
    for d in range(2, max_dim + 1):
        if kind in ROTATION_KINDS:
            if layout == "full" and d % 2:
                continue
            if layout == "fft" and d & (d - 1):
                continue
        _, h2h = param_count(CellConfig(kind, d_x=d_x, d_h=d, layout=layout))
        gap = abs(h2h - target_h2h)
        if best_gap is None or gap < best_gap:
            best, best_gap = d, gap
        if h2h > 2 * target_h2h:
            break
    return best
