"""Losses, optimizers, backpropagation through time, and the training loop.

The readout is one affine layer from the hidden state to per-step logits,
shared across timesteps.  Two heads exist: "tokens" (one softmax over the
vocabulary) and "paren" (ten independent 11-way softmax heads whose
cross-entropies are averaged per step).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cells, tasks
from .cells import CellConfig, CellParams, CellState, cell_backward, cell_forward, zero_state
from .config import RunConfig
from .numcore import Prng, onehot
from .orthocore import DenseRotation

PAREN_HEADS = tasks.PAREN_TYPES
PAREN_CLASSES = tasks.PAREN_MAX_OPEN + 1


@dataclass
class OutputLayer:
    W: np.ndarray                 # (head_width, d_h)
    b: np.ndarray                 # (head_width,)
    head: str = "tokens"          # "tokens" | "paren"

    def astype(self, dtype):
        return OutputLayer(self.W.astype(dtype), self.b.astype(dtype), self.head)


def output_init(d_h: int, width: int, rng: Prng, head: str = "tokens") -> OutputLayer:
    s = math.sqrt(6.0 / (width + d_h))
    W = rng.uniform(-s, s, width * d_h).reshape(width, d_h)
    return OutputLayer(W, np.zeros(width), head)


def full_named(params: CellParams, out: OutputLayer) -> dict[str, np.ndarray]:
    """Cell parameters plus readout as one flat name -> array tree."""
    return {**params.named(), "W_out": out.W, "b_out": out.b}


# ---------------------------------------------------------------------------
# losses

def softmax_xent(logits: np.ndarray, target):
    """Cross-entropy in nats with max-subtraction stabilization.

    1-D logits with an integer target return scalars; (B, V) logits with
    (B,) targets return per-row losses and gradients.  The gradient is
    softmax(logits) - onehot(target).
    """
    logits = np.asarray(logits)
    squeeze = logits.ndim == 1
    lg = logits[None, :] if squeeze else logits
    tg = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if tg.min() < 0 or tg.max() >= lg.shape[1]:
        raise ValueError(f"target out of range for {lg.shape[1]} classes")
    m = lg.max(axis=1, keepdims=True)
    ex = np.exp(lg - m)
    zsum = ex.sum(axis=1, keepdims=True)
    p = ex / zsum
    rows = np.arange(lg.shape[0])
    loss = np.log(zsum[:, 0]) + m[:, 0] - lg[rows, tg]
    grad = p.copy()
    grad[rows, tg] -= 1.0
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error and its gradient 2*(pred - target)/len."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _paren_step_loss(logits: np.ndarray, target: np.ndarray):
    """Mean of the ten 11-way head cross-entropies, per batch row.

    logits (B, 110), target (B, 10) counts; gradient has the logits shape.
    """
    B = logits.shape[0]
    lg = logits.reshape(B * PAREN_HEADS, PAREN_CLASSES)
    tg = target.reshape(B * PAREN_HEADS)
    loss_rows, grad_rows = softmax_xent(lg, tg)
    loss = loss_rows.reshape(B, PAREN_HEADS).mean(axis=1)
    grad = grad_rows.reshape(B, PAREN_HEADS * PAREN_CLASSES) / PAREN_HEADS
    return loss, grad


# ---------------------------------------------------------------------------
# optimizers

@dataclass
class OptimState:
    kind: str                     # "rmsprop" | "adam"
    lr: float
    decay: float = 0.9            # rmsprop mean-square decay
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    slots: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("rmsprop", "adam"):
            raise ValueError(f"unknown optimizer '{self.kind}'")


def optim_new(kind: str, lr: float, decay: float = 0.9, eps: float = 1e-8) -> OptimState:
    return OptimState(kind, lr, decay, eps=eps)


def optimizer_step(named: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   st: OptimState) -> None:
    """Update parameters in place (rotation angles stay aliased to the plan).

    rmsprop: ms <- decay*ms + (1-decay)*g^2 ; p -= lr * g / sqrt(ms + eps)
    adam:    bias-corrected first/second moments with beta1/beta2/eps.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter '{name}'")
    st.t += 1
    for name, p in named.items():
        g = grads[name]
        slot = st.slots.setdefault(name, {})
        if st.kind == "rmsprop":
            ms = slot.setdefault("ms", np.zeros_like(p))
            ms *= st.decay
            ms += (1.0 - st.decay) * g * g
            p -= st.lr * g / np.sqrt(ms + st.eps)
        else:
            m = slot.setdefault("m", np.zeros_like(p))
            v = slot.setdefault("v", np.zeros_like(p))
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            mhat = m / (1.0 - st.beta1 ** st.t)
            vhat = v / (1.0 - st.beta2 ** st.t)
            p -= st.lr * mhat / (np.sqrt(vhat) + st.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients when their global L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return grads


# ---------------------------------------------------------------------------
# backpropagation through time

@dataclass
class BpttResult:
    loss: float
    grads: dict[str, np.ndarray]
    final_state: CellState
    accuracy: float
    gates: np.ndarray | None = None     # (T, B, d_h) update-gate activations


def _encode_inputs(inputs: np.ndarray, d_x: int, dtype) -> np.ndarray:
    inputs = np.asarray(inputs)
    if inputs.ndim == 3:
        return inputs.astype(dtype, copy=False)
    return onehot(inputs, d_x, dtype=dtype)


def run_bptt(params: CellParams, out: OutputLayer, batch,
             state: CellState | None = None, record_gates: bool = False,
             engine: str = "dense", compute_grads: bool = True) -> BpttResult:
    """Forward + reverse over a full unrolled sequence.

    `batch` is a tasks.Batch or a list of TaskSample sharing one length.
    The loss is averaged over unmasked steps and batch; gradients are for
    that averaged scalar.  `engine` picks the rotation evaluation path:
    "dense" materializes the orthogonal matrix once per call, "layered"
    walks the 2x2 rotations per step; both give identical results to
    roundoff.  `compute_grads=False` skips the reverse pass (grads empty),
    which is what finite-difference probing wants.
    """
    if isinstance(batch, (list, tuple)):
        batch = tasks.stack(batch)
    cfg = params.config
    dtype = params.arrays[next(iter(params.arrays))].dtype
    x_seq = _encode_inputs(batch.inputs, cfg.d_x, dtype)
    B, T = x_seq.shape[0], x_seq.shape[1]
    targets = np.asarray(batch.targets)
    mask = np.asarray(batch.mask, dtype=np.float64)
    if mask.shape != (B, T):
        raise ValueError(f"mask shape {mask.shape} does not match batch ({B}, {T})")
    acc_mask = batch.acc_mask if batch.acc_mask is not None else mask > 0
    total_mask = mask.sum()
    if total_mask <= 0:
        raise ValueError("batch has no unmasked steps")

    if record_gates and (cfg.kind not in ("gru", "goru") or cfg.disable_update):
        raise ValueError(f"cell kind '{cfg.kind}' has no update gate to record")

    rot = None
    if params.plan is not None and engine == "dense":
        rot = DenseRotation(params.plan)
    if state is None:
        state = zero_state(cfg, B, dtype)

    tapes = []
    dlogits_seq = []
    gates = []
    loss = 0.0
    n_correct = 0
    n_scored = 0
    for t in range(T):
        state, tape = cell_forward(params, state, x_seq[:, t], rot=rot)
        logits = state.h @ out.W.T + out.b
        if out.head == "paren":
            loss_rows, grad_rows = _paren_step_loss(logits, targets[:, t])
            pred_ok = (logits.reshape(B, PAREN_HEADS, PAREN_CLASSES).argmax(axis=2)
                       == targets[:, t]).all(axis=1)
        else:
            loss_rows, grad_rows = softmax_xent(logits, targets[:, t])
            pred_ok = logits.argmax(axis=1) == targets[:, t]
        w = (mask[:, t] / total_mask).astype(dtype)
        step_loss = float(loss_rows @ w)
        if not math.isfinite(step_loss):
            raise RuntimeError(f"non-finite loss at sequence step {t}")
        loss += step_loss
        sel = acc_mask[:, t]
        n_correct += int(pred_ok[sel].sum())
        n_scored += int(sel.sum())
        if compute_grads:
            tapes.append(tape)
            dlogits_seq.append(grad_rows * w[:, None])
        if record_gates:
            gates.append(tape["z"])

    accuracy = n_correct / n_scored if n_scored else 0.0
    if not compute_grads:
        return BpttResult(loss, {}, state, accuracy,
                          np.stack(gates) if gates else None)

    grads: dict[str, np.ndarray] = {name: np.zeros_like(p)
                                    for name, p in full_named(params, out).items()}
    gh = np.zeros((B, cfg.d_h), dtype=dtype)
    gc = np.zeros((B, cfg.d_h), dtype=dtype) if cfg.kind == "lstm" else None
    for t in reversed(range(T)):
        dlogits = dlogits_seq[t]
        h_t = tapes[t + 1]["h_prev"] if t + 1 < T else state.h
        grads["W_out"] += dlogits.T @ h_t
        grads["b_out"] += dlogits.sum(axis=0)
        gh = gh + dlogits @ out.W
        step_grads, gstate, _ = cell_backward(params, tapes[t], gh, grad_c=gc, rot=rot)
        for name, g in step_grads.items():
            grads[name] += g
        gh = gstate.h
        gc = gstate.c

    if rot is not None:
        grads["angles"] += rot.finish()

    return BpttResult(loss, grads, state,
                      accuracy, np.stack(gates) if gates else None)


# ---------------------------------------------------------------------------
# training driver

@dataclass
class MetricRow:
    step: int
    loss: float
    accuracy: float
    wallclock_s: float


@dataclass
class TrainResult:
    rows: list[MetricRow]
    params: CellParams
    out: OutputLayer
    config: RunConfig


def build_model(cfg: RunConfig, vocab: int | None = None):
    """Seeded cell + readout for a run configuration.

    Returns (params, out, d_x).  `vocab` overrides the token count for
    charlm, where it depends on the corpus.
    """
    rng = Prng(cfg.seed)
    if cfg.task == "charlm":
        if vocab is None:
            raise ValueError("charlm model needs the corpus vocabulary size")
        d_x, width, head = vocab, vocab, "tokens"
    elif cfg.task == "paren":
        d_x = tasks.task_vocab("paren")
        width, head = PAREN_HEADS * PAREN_CLASSES, "paren"
    else:
        d_x = tasks.task_vocab(cfg.task, cfg.n_data)
        width, head = d_x, "tokens"
    cell_cfg = CellConfig(cfg.kind, d_x=d_x, d_h=cfg.d_h,
                          disable_reset=cfg.disable_reset,
                          disable_update=cfg.disable_update,
                          layout=cfg.layout, gate_bias_init=cfg.gate_bias_init)
    params = cells.cell_init(cell_cfg, rng)
    out = output_init(cfg.d_h, width, rng, head)
    if cfg.dtype != "float64":
        params = params.astype(np.float32)
        out = out.astype(np.float32)
    return params, out, d_x


def train_loop(cfg: RunConfig, on_metric=None) -> TrainResult:
    """Run one experiment: generate batches, BPTT, optimize, log metrics.

    Synthetic tasks reset the state every batch; charlm carries the final
    hidden state into the next contiguous chunk and resets it only when
    the corpus stream wraps around.
    """
    vocab = None
    encoded = None
    if cfg.task == "charlm":
        encoded, vocab_bytes = tasks.load_corpus(cfg.corpus)
        vocab = len(vocab_bytes)
    params, out, _ = build_model(cfg, vocab)
    opt = optim_new(cfg.optimizer, cfg.resolved_lr(), cfg.decay, eps=cfg.opt_eps)
    named = full_named(params, out)
    task_rng = Prng(cfg.seed + 1)

    stream = None
    carry: CellState | None = None
    rows: list[MetricRow] = []
    t0 = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        if cfg.task == "charlm":
            if stream is None:
                stream = tasks.charlm_batches(encoded, cfg.seq_len, cfg.batch)
            try:
                xs, ys = next(stream)
            except StopIteration:
                stream = tasks.charlm_batches(encoded, cfg.seq_len, cfg.batch)
                xs, ys = next(stream)
                carry = None
            batch = tasks.Batch(xs, ys, np.ones(xs.shape, dtype=np.float64))
            res = run_bptt(params, out, batch, state=carry)
            carry = CellState(res.final_state.h.copy(),
                              None if res.final_state.c is None else res.final_state.c.copy())
        else:
            batch = tasks.gen_batch(cfg.task, cfg.T, cfg.n_data, cfg.K, cfg.batch, task_rng)
            res = run_bptt(params, out, batch)
        grads = res.grads
        if cfg.clip is not None:
            grads = clip_global_norm(grads, cfg.clip)
        optimizer_step(named, grads, opt)
        if step % cfg.log_interval == 0 or step == cfg.steps:
            wall = (time.perf_counter() - t0) if cfg.timing else 0.0
            row = MetricRow(step, res.loss, res.accuracy, wall)
            rows.append(row)
            if on_metric is not None:
                on_metric(row)
    return TrainResult(rows, params, out, cfg)
