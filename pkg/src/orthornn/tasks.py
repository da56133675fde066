"""Synthetic long-dependency tasks, analytic baselines, and a char-LM stream.

Token conventions:
  copy     vocab n+2: data 0..n-1, blank = n, marker = n+1
  denoise  vocab n+2: data 0..n-1, noise = n, marker = n+1
  paren    vocab 30: opening types 0..9, closing types 10..19 (type i is
           closed by 10+i), noise symbols 20..29; targets are the ten
           per-type unmatched counts (0..10) after each input symbol
  charlm   byte-level; vocabulary = distinct bytes observed in the corpus

All generators are pure functions of their parameters and the Prng handle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .numcore import Prng

PAREN_TYPES = 10
PAREN_MAX_OPEN = 10


@dataclass
class TaskSample:
    input: np.ndarray    # (T,) int tokens
    target: np.ndarray   # (T,) int tokens, or (T, 10) counts for paren
    mask: np.ndarray     # (T,) per-step loss weights


@dataclass
class Batch:
    inputs: np.ndarray             # (B, T) int tokens or (B, T, d_x) floats
    targets: np.ndarray            # (B, T) int or (B, T, 10) int
    mask: np.ndarray               # (B, T) float
    acc_mask: np.ndarray | None = None   # bool steps counted for accuracy


def gen_copy(T: int, n: int, K: int, rng: Prng, variable_position: bool = False) -> TaskSample:
    """Recall task: K data tokens, T-step delay, marker-triggered recall.

    Layout (length T + 2K): data block, blanks, marker at index K+T-1,
    K trailing blanks; the target repeats the data block on the final K
    steps and is blank elsewhere.  `variable_position` moves the data
    block to a random offset in [0, T) instead of the start.
    """
    if T < 1 or K < 1 or n < 2:
        raise ValueError(f"copy task needs T >= 1, K >= 1, n >= 2, got T={T} K={K} n={n}")
    blank, marker = n, n + 1
    length = T + 2 * K
    data = rng.integers(0, n, K)
    inp = np.full(length, blank, dtype=np.int64)
    start = int(rng.integers(0, T, 1)[0]) if variable_position else 0
    inp[start:start + K] = data
    inp[K + T - 1] = marker
    tgt = np.full(length, blank, dtype=np.int64)
    tgt[-K:] = data
    return TaskSample(inp, tgt, np.ones(length))


def gen_denoise(T: int, n: int, K: int, rng: Prng) -> TaskSample:
    """Extraction task: K data tokens at random positions in T noise steps.

    Layout (length T + 1 + K): noise with data at K uniformly-drawn
    distinct positions, marker at index T, K trailing noise; the target
    lists the data tokens in positional order on the final K steps and is
    noise elsewhere.
    """
    if K > T:
        raise ValueError(f"denoise task needs K <= T, got K={K} T={T}")
    if K < 1 or n < 2:
        raise ValueError(f"denoise task needs K >= 1, n >= 2, got K={K} n={n}")
    noise, marker = n, n + 1
    length = T + 1 + K
    data = rng.integers(0, n, K)
    positions = np.sort(rng.choice_no_replace(T, K))
    inp = np.full(length, noise, dtype=np.int64)
    inp[positions] = data
    inp[T] = marker
    tgt = np.full(length, noise, dtype=np.int64)
    tgt[-K:] = data
    return TaskSample(inp, tgt, np.ones(length))


def gen_paren_batch(T: int, batch: int, rng: Prng, n_noise: int = PAREN_TYPES):
    """Vectorized parenthesis-counting samples.

    At each step the symbol is drawn uniformly from the currently legal
    set: every noise symbol, any opening type with fewer than 10 unmatched,
    any closing type with at least one unmatched.  Returns (inputs (B, T),
    targets (B, T, 10)) where target row t holds the per-type unmatched
    counts after consuming input t.
    """
    if T < 1 or batch < 1:
        raise ValueError(f"paren task needs T >= 1 and batch >= 1, got T={T} batch={batch}")
    vocab = 2 * PAREN_TYPES + n_noise
    inputs = np.zeros((batch, T), dtype=np.int64)
    targets = np.zeros((batch, T, PAREN_TYPES), dtype=np.int64)
    counts = np.zeros((batch, PAREN_TYPES), dtype=np.int64)
    rows = np.arange(batch)
    legal = np.zeros((batch, vocab))
    for t in range(T):
        legal[:, :PAREN_TYPES] = counts < PAREN_MAX_OPEN
        legal[:, PAREN_TYPES:2 * PAREN_TYPES] = counts > 0
        legal[:, 2 * PAREN_TYPES:] = 1.0
        cdf = np.cumsum(legal, axis=1)
        u = rng.random(batch) * cdf[:, -1]
        sym = np.minimum((cdf > u[:, None]).argmax(axis=1), vocab - 1)
        is_open = sym < PAREN_TYPES
        is_close = (sym >= PAREN_TYPES) & (sym < 2 * PAREN_TYPES)
        np.add.at(counts, (rows[is_open], sym[is_open]), 1)
        np.add.at(counts, (rows[is_close], sym[is_close] - PAREN_TYPES), -1)
        inputs[:, t] = sym
        targets[:, t, :] = counts
    return inputs, targets


def gen_paren(T: int, rng: Prng, n_noise: int = PAREN_TYPES) -> TaskSample:
    inputs, targets = gen_paren_batch(T, 1, rng, n_noise)
    return TaskSample(inputs[0], targets[0], np.ones(T))


def replay_paren_counts(inp: np.ndarray) -> np.ndarray:
    """Independent per-type counter: the target matrix implied by an input."""
    counts = np.zeros(PAREN_TYPES, dtype=np.int64)
    out = np.zeros((len(inp), PAREN_TYPES), dtype=np.int64)
    for t, sym in enumerate(inp):
        if sym < PAREN_TYPES:
            counts[sym] += 1
        elif sym < 2 * PAREN_TYPES:
            counts[sym - PAREN_TYPES] -= 1
        out[t] = counts
    return out


def baseline_xent(task: str, T: int, n: int = 8, K: int = 10,
                  mc_samples: int = 10000, rng: Prng | None = None) -> float:
    """Cross-entropy per step (nats) of the best input-independent predictor.

    Copy and denoise are analytic: only the K recall steps are uncertain and
    each is uniform over n data tokens.  Parenthesis is estimated by Monte
    Carlo: the optimal constant predictor per (step, type) is the marginal
    count distribution, so the loss is the mean of the marginal entropies.
    """
    if task == "copy":
        return K * math.log(n) / (T + 2 * K)
    if task == "denoise":
        return K * math.log(n) / (T + 1 + K)
    if task == "paren":
        rng = rng if rng is not None else Prng(0)
        hist = np.zeros((T, PAREN_TYPES, PAREN_MAX_OPEN + 1), dtype=np.int64)
        done, chunk = 0, 2000
        while done < mc_samples:
            b = min(chunk, mc_samples - done)
            _, targets = gen_paren_batch(T, b, rng)
            for v in range(PAREN_MAX_OPEN + 1):
                hist[:, :, v] += (targets == v).sum(axis=0)
            done += b
        p = hist / mc_samples
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = np.where(p > 0, -p * np.log(p), 0.0)
        return float(ent.sum(axis=2).mean())
    raise ValueError(f"no baseline for task '{task}'")


def stack(samples) -> Batch:
    """Stack equal-length samples into batch arrays."""
    samples = list(samples)
    if not samples:
        raise ValueError("cannot stack an empty batch")
    length = len(samples[0].input)
    if any(len(s.input) != length for s in samples):
        raise ValueError("all samples in a batch must share sequence length")
    return Batch(np.stack([s.input for s in samples]),
                 np.stack([s.target for s in samples]),
                 np.stack([s.mask for s in samples]).astype(np.float64))


def gen_batch(task: str, T: int, n: int, K: int, batch: int, rng: Prng) -> Batch:
    """One training batch with the accuracy region marked per task."""
    if task == "copy":
        b = stack(gen_copy(T, n, K, rng) for _ in range(batch))
        acc = np.zeros_like(b.mask, dtype=bool)
        acc[:, -K:] = True
        return Batch(b.inputs, b.targets, b.mask, acc)
    if task == "denoise":
        b = stack(gen_denoise(T, n, K, rng) for _ in range(batch))
        acc = np.zeros_like(b.mask, dtype=bool)
        acc[:, -K:] = True
        return Batch(b.inputs, b.targets, b.mask, acc)
    if task == "paren":
        inputs, targets = gen_paren_batch(T, batch, rng)
        mask = np.ones((batch, T))
        return Batch(inputs, targets, mask, np.ones((batch, T), dtype=bool))
    raise ValueError(f"unknown synthetic task '{task}'")


def task_vocab(task: str, n: int = 8) -> int:
    if task in ("copy", "denoise"):
        return n + 2
    if task == "paren":
        return 3 * PAREN_TYPES
    raise ValueError(f"unknown synthetic task '{task}'")


# ---------------------------------------------------------------------------
# character-level language modeling over an arbitrary byte corpus

def load_corpus(path: str):
    """Read a corpus file; returns (encoded indices, vocabulary bytes)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw:
        raise ValueError(f"corpus file '{path}' is empty")
    data = np.frombuffer(raw, dtype=np.uint8)
    vocab = np.unique(data)
    lookup = np.zeros(256, dtype=np.int64)
    lookup[vocab] = np.arange(len(vocab))
    return lookup[data], vocab


def charlm_batches(encoded: np.ndarray, seq_len: int = 50, batch: int = 1):
    """One pass of contiguous (input, target) chunks.

    The corpus is split into `batch` contiguous lanes; consecutive chunks
    of a lane are consecutive in the corpus, so a recurrent state carried
    between chunks always continues the same text.  Targets are the inputs
    shifted one byte ahead.
    """
    n = len(encoded)
    lane_len = (n - 1) // batch
    if lane_len < seq_len:
        raise ValueError(
            f"corpus too small: {n} bytes cannot fill {batch} lanes of {seq_len}+1 steps")
    x = encoded[:batch * lane_len].reshape(batch, lane_len)
    y = encoded[1:batch * lane_len + 1].reshape(batch, lane_len)
    for c in range(lane_len // seq_len):
        sl = slice(c * seq_len, (c + 1) * seq_len)
        yield x[:, sl].astype(np.int64), y[:, sl].astype(np.int64)


# ---------------------------------------------------------------------------
# dataset files: one JSON record per line, keys input/target/mask

def write_samples(path: str, samples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            rec = {"input": np.asarray(s.input).tolist(),
                   "target": np.asarray(s.target).tolist(),
                   "mask": np.asarray(s.mask).astype(np.int64).tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_samples(path: str) -> list[TaskSample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(TaskSample(np.asarray(rec["input"], dtype=np.int64),
                                  np.asarray(rec["target"], dtype=np.int64),
                                  np.asarray(rec["mask"], dtype=np.float64)))
    return out
