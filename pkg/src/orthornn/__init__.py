"""orthornn: a small recurrent-network laboratory.

Gated Orthogonal Recurrent Unit (GORU), GRU, LSTM, vanilla RNN and
orthogonal-RNN cells with exactly orthogonal rotation-parametrized hidden
transforms, hand-written reverse-mode BPTT verified against finite
differences, and deterministic synthetic long-dependency tasks (copy,
denoise, parenthesis counting) plus byte-level language modeling.
"""

from .cells import (CellConfig, CellParams, CellState, cell_backward, cell_forward,
                    cell_init, match_hidden_size, param_count, zero_state)
from .config import RunConfig
from .numcore import Prng, activation, activation_deriv, affine, modrelu, sigmoid
from .orthocore import (DenseRotation, RotationPlan, apply, apply_transpose, plan_new,
                        rotation_backward, to_dense)
from .tasks import (Batch, TaskSample, baseline_xent, gen_copy, gen_denoise, gen_paren,
                    gen_paren_batch, replay_paren_counts)
from .train import (BpttResult, OptimState, OutputLayer, clip_global_norm, mse,
                    optim_new, optimizer_step, output_init, run_bptt, softmax_xent,
                    train_loop)

__version__ = "0.1.0"
