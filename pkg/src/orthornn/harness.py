"""Finite-difference gradient oracle, gate-activation probe, metrics writer."""

from __future__ import annotations

import numpy as np

from . import cells, tasks, train
from .cells import CellConfig, CellParams, CellState, cell_backward, cell_forward
from .numcore import Prng, onehot

KINK_MARGIN = 1e-3   # redraw random instances this close to a modrelu kink

# central differences of an O(1) objective at step 1e-6 carry an irreducible
# ~1e-10 absolute roundoff error, so components much smaller than this floor
# cannot be resolved to a 1e-5 relative tolerance by any double-precision FD;
# the suites use it as the relative-error denominator floor
FD_NOISE_FLOOR = 1e-4


def numeric_gradcheck(f, params: dict[str, np.ndarray], eps: float = 1e-6,
                      floor: float = 1e-8, loss_fn=None) -> float:
    """Worst relative error between f's gradients and central differences.

    `f(params)` must return (scalar, grads-dict) in double precision; the
    dict is perturbed coordinate-by-coordinate in place.  Relative error
    uses max(|analytic|, |numeric|, floor) as the denominator.  `loss_fn`
    optionally evaluates the same scalar without assembling gradients,
    which roughly halves the probing cost.
    """
    base_loss, analytic = f(params)
    if not np.isfinite(base_loss):
        raise FloatingPointError("gradcheck objective is non-finite at the base point")
    feval = loss_fn if loss_fn is not None else (lambda p: f(p)[0])
    worst = 0.0
    for name, arr in params.items():
        an = np.asarray(analytic[name]).ravel()
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = feval(params)
            flat[i] = old - eps
            down = feval(params)
            flat[i] = old
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"gradcheck objective non-finite near '{name}'")
            fd = (up - down) / (2.0 * eps)
            err = abs(fd - an[i]) / max(abs(fd), abs(an[i]), floor)
            worst = max(worst, err)
    return worst


def _random_cell(kind: str, rng: Prng, d_x: int, d_h: int, layout: str,
                 disable_reset: bool, disable_update: bool) -> CellParams:
    cfg = CellConfig(kind, d_x=d_x, d_h=d_h, layout=layout,
                     disable_reset=disable_reset, disable_update=disable_update)
    return cells.cell_init(cfg, rng)


def _modrelu_margin(tape: dict, b_h: np.ndarray) -> float:
    """Distance of this step's modrelu pre-activations from both kinds of kink."""
    pre = tape.get("cpre", tape.get("pre"))
    if pre is None:
        return np.inf
    return float(min(np.abs(pre).min(), np.abs(np.abs(pre) + b_h).min()))


def gradcheck_single_step(kind: str, seed: int, d_x: int = 3, d_h: int = 8,
                          layout: str = "full", disable_reset: bool = False,
                          disable_update: bool = False, eps: float = 1e-6,
                          floor: float = FD_NOISE_FLOOR) -> float:
    """FD check of one cell step wrt parameters, previous state, and input."""
    batch = 2
    for attempt in range(50):
        rng = Prng(seed + 1000 * attempt)
        params = _random_cell(kind, rng, d_x, d_h, layout, disable_reset, disable_update)
        h0 = rng.uniform(-1.0, 1.0, batch * d_h).reshape(batch, d_h)
        x0 = rng.uniform(-1.0, 1.0, batch * d_x).reshape(batch, d_x)
        c0 = rng.uniform(-1.0, 1.0, batch * d_h).reshape(batch, d_h) if kind == "lstm" else None
        rvec = rng.uniform(-1.0, 1.0, batch * d_h).reshape(batch, d_h)
        _, tape = cell_forward(params, CellState(h0, c0), x0)
        if _modrelu_margin(tape, params.arrays.get("b_h", 0.0)) >= KINK_MARGIN:
            break
    tree = dict(params.named())
    tree["__h0"] = h0
    tree["__x0"] = x0
    if c0 is not None:
        tree["__c0"] = c0

    def f(t):
        state = CellState(t["__h0"], t.get("__c0"))
        new_state, tp = cell_forward(params, state, t["__x0"])
        loss = float((rvec * new_state.h).sum())
        grads, gstate, gx = cell_backward(params, tp, rvec)
        full = dict(grads)
        full["__h0"] = gstate.h
        full["__x0"] = gx
        if c0 is not None:
            full["__c0"] = gstate.c
        return loss, full

    return numeric_gradcheck(f, tree, eps, floor)


def gradcheck_bptt(kind: str, seed: int, T: int = 10, d_x: int = 3, d_h: int = 8,
                   layout: str = "full", disable_reset: bool = False,
                   disable_update: bool = False, n_classes: int = 5,
                   engine: str = "dense", eps: float = 1e-6,
                   floor: float = FD_NOISE_FLOOR) -> float:
    """FD check of the full unrolled-sequence gradients for one random run."""
    batch = 1
    for attempt in range(50):
        rng = Prng(seed + 1000 * attempt)
        params = _random_cell(kind, rng, d_x, d_h, layout, disable_reset, disable_update)
        out = train.output_init(d_h, n_classes, rng)
        inputs = rng.uniform(-1.0, 1.0, batch * T * d_x).reshape(batch, T, d_x)
        targets = rng.integers(0, n_classes, batch * T).reshape(batch, T)
        data = tasks.Batch(inputs, targets, np.ones((batch, T)))
        # reject draws too close to a modrelu kink anywhere in the unroll
        if kind in cells.ROTATION_KINDS:
            state = cells.zero_state(params.config, batch)
            margin = np.inf
            for t in range(T):
                state, tape = cell_forward(params, state, inputs[:, t])
                margin = min(margin, _modrelu_margin(tape, params.arrays["b_h"]))
            if margin < KINK_MARGIN:
                continue
        break

    def f(_tree):
        res = train.run_bptt(params, out, data, engine=engine)
        return res.loss, res.grads

    def floss(_tree):
        return train.run_bptt(params, out, data, engine=engine, compute_grads=False).loss

    return numeric_gradcheck(f, train.full_named(params, out), eps, floor, loss_fn=floss)


GRADCHECK_VARIANTS = (
    ("vanilla", {}),
    ("gru", {}),
    ("lstm", {}),
    ("ortho_rnn", {"layout": "full"}),
    ("ortho_rnn", {"layout": "fft"}),
    ("goru", {"layout": "full"}),
    ("goru", {"layout": "fft"}),
    ("goru", {"disable_reset": True}),
    ("goru", {"disable_update": True}),
)


def gradcheck_all(n_seeds: int = 2, T: int = 6, verbose: bool = False) -> dict[str, float]:
    """Worst FD error per cell variant, over single-step and BPTT suites."""
    results: dict[str, float] = {}
    for kind, kw in GRADCHECK_VARIANTS:
        label = kind
        if kw.get("layout") == "fft":
            label += "/fft"
        if kw.get("disable_reset"):
            label += "/no-reset"
        if kw.get("disable_update"):
            label += "/no-update"
        worst = 0.0
        for s in range(n_seeds):
            worst = max(worst, gradcheck_single_step(kind, seed=7 * s + 1, **kw))
            worst = max(worst, gradcheck_bptt(kind, seed=13 * s + 2, T=T, **kw))
        results[label] = worst
        if verbose:
            print(f"{label:24s} worst rel err {worst:.3e}")
    return results


def probe_update_gate(params: CellParams, sample: tasks.TaskSample,
                      threshold: float = 0.7, noise_tokens=()):
    """Per-step fraction of update-gate units above `threshold`.

    Runs the forward pass on one sample and returns (fractions, is_noise)
    where is_noise flags steps whose input token is in `noise_tokens`.
    """
    cfg = params.config
    if cfg.kind not in ("gru", "goru") or cfg.disable_update:
        raise ValueError(
            f"cell kind '{cfg.kind}' has no update gate to probe; "
            "use a gru or goru cell with its update gate enabled")
    tokens = np.asarray(sample.input)
    x_seq = onehot(tokens, cfg.d_x)
    state = cells.zero_state(cfg, 1)
    fractions = np.zeros(len(tokens))
    for t in range(len(tokens)):
        state, tape = cell_forward(params, state, x_seq[None, t])
        fractions[t] = float((tape["z"] > threshold).mean())
    noise = np.isin(tokens, np.asarray(list(noise_tokens), dtype=np.int64))
    return fractions, noise


def noise_token_ids(task: str, n: int = 8) -> tuple[int, ...]:
    """Token ids treated as noise/blank input for the gate probe."""
    if task in ("copy", "denoise"):
        return (n,)
    if task == "paren":
        return tuple(range(2 * tasks.PAREN_TYPES, 3 * tasks.PAREN_TYPES))
    raise ValueError(f"no noise tokens defined for task '{task}'")


def write_metrics(rows, path: str, config_comment: str | None = None) -> None:
    """CSV with one row per logging interval: step,loss,accuracy,wallclock_s."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if config_comment is not None:
            fh.write(f"# {config_comment}\n")
        fh.write("step,loss,accuracy,wallclock_s\n")
        for r in rows:
            fh.write(f"{r.step},{r.loss:.10g},{r.accuracy:.6g},{r.wallclock_s:.3f}\n")
