"""Experiment configuration shared by the training loop and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

TASKS = ("copy", "denoise", "paren", "charlm")
MODELS = ("vanilla", "gru", "lstm", "eurnn", "goru")

# CLI model names map onto cell kinds; "eurnn" is the orthogonal RNN cell.
MODEL_TO_KIND = {
    "vanilla": "vanilla",
    "gru": "gru",
    "lstm": "lstm",
    "eurnn": "ortho_rnn",
    "goru": "goru",
}

DEFAULT_LR = 0.001
DENOISE_LR = 0.01


@dataclass
class RunConfig:
    """Full description of one experiment run."""

    task: str = "copy"
    model: str = "goru"
    T: int = 50
    n_data: int = 8
    K: int = 10
    d_h: int = 64
    batch: int = 128
    optimizer: str = "rmsprop"
    lr: float | None = None          # None resolves to the task default
    decay: float = 0.9
    opt_eps: float = 1e-8
    steps: int = 2000
    seed: int = 0
    clip: float | None = None        # off by default
    layout: str = "full"
    disable_reset: bool = False
    disable_update: bool = False
    gate_bias_init: float = 0.0
    corpus: str | None = None        # charlm only
    seq_len: int = 50                # charlm truncation length
    metrics_out: str | None = None
    checkpoint_out: str | None = None
    log_interval: int = 20
    dtype: str = "float64"
    timing: bool = False             # real wallclock in metrics (breaks byte-identity)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task '{self.task}'")
        if self.model not in MODELS:
            raise ValueError(f"unknown model '{self.model}'")
        if self.task == "charlm" and not self.corpus:
            raise ValueError("charlm task requires a corpus path")
        if (self.disable_reset or self.disable_update) and self.model != "goru":
            raise ValueError("gate ablation flags only apply to --model goru")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"dtype must be float64 or float32, got '{self.dtype}'")

    @property
    def kind(self) -> str:
        return MODEL_TO_KIND[self.model]

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return DENOISE_LR if self.task == "denoise" else DEFAULT_LR

    def describe(self) -> str:
        """Single-line resolved-config summary (for --dump-config)."""
        items = asdict(self)
        items["lr"] = self.resolved_lr()
        return " ".join(f"{k}={v}" for k, v in sorted(items.items()))
