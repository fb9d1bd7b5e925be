"""Composite loss, NAdam optimizer, plateau scheduler, and the epoch loop.

Loss
----
Per batch: ``L = L1 + alpha * BCE`` where the L1 term is the mean
absolute error of normalized log-F0 over frames voiced in truth (0 when
the batch has none), and the BCE term is binary cross-entropy with
logits over all frames, in the numerically stable form

    max(g, 0) - g * v + ln(1 + exp(-|g|)).

The returned output-side gradients are exact partials of this scalar,
so the backward pass only has to sum over rows.

Optimizer
---------
NAdam with the published momentum-decay schedule: beta1 = 0.9,
beta2 = 0.999, eps = 1e-8, psi = 0.004; bias correction through the
running product of schedule values, Nesterov-style lookahead on the
first moment.

Scheduler
---------
Higher metric = better.  One counter tracks epochs without strict
improvement; at ``patience_lr`` it fires a single lr reduction
(factor 0.2, counter keeps running), at ``patience_stop`` it stops.
Only strict improvement resets the counter; stop is absorbing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .featureio import Dataset, FrameTable, compute_norm_stats
from .metrics import PitchErrorCounts, pitch_error_counts
from .model import (
    Gradients,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
    predict_f0,
    sigmoid,
)

NADAM_BETA1 = 0.9
NADAM_BETA2 = 0.999
NADAM_EPS = 1e-8
NADAM_PSI = 0.004

HISTORY_COLUMNS = ("epoch", "train_loss", "val_metric", "lr", "event")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults match the adopted recipe."""

    alpha: float = 28.112
    lr: float = 0.0003
    batch_size: int = 262144
    patience_lr: int = 5
    lr_factor: float = 0.2
    patience_stop: int = 10
    max_epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.lr <= 0 or self.batch_size <= 0:
            raise ValueError("alpha, lr, and batch_size must be positive")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.patience_lr < 1 or self.patience_stop < 1:
            raise ValueError("patience values must be >= 1")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")


def composite_loss(
    f0hat_norm: np.ndarray,
    g: np.ndarray,
    target_logf0_norm: np.ndarray,
    voiced: np.ndarray,
    alpha: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Masked L1 plus weighted BCE-with-logits; returns exact output gradients.

    The L1 subgradient at 0 is taken as 0.  Unvoiced frames contribute
    nothing to the regression gradient; every frame contributes to the
    voicing gradient.
    """
    f0hat_norm = np.asarray(f0hat_norm, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    target = np.asarray(target_logf0_norm, dtype=np.float64)
    voiced = np.asarray(voiced, dtype=bool)
    n = len(f0hat_norm)
    if not (len(g) == len(target) == len(voiced) == n) or n == 0:
        raise ValueError("loss inputs must be equal-length non-empty vectors")
    if not (np.isfinite(f0hat_norm).all() and np.isfinite(g).all()
            and np.isfinite(target).all()):
        raise ValueError("non-finite loss input")
    v = voiced.astype(np.float64)
    n_voiced = int(voiced.sum())

    diff = f0hat_norm - target
    if n_voiced:
        l1 = float(np.abs(diff[voiced]).sum() / n_voiced)
    else:
        l1 = 0.0
    bce = float((np.maximum(g, 0.0) - g * v + np.log1p(np.exp(-np.abs(g)))).mean())
    loss = l1 + alpha * bce

    dL_df0hat = np.zeros(n)
    if n_voiced:
        dL_df0hat[voiced] = np.sign(diff[voiced]) / n_voiced
    dL_dg = alpha * (sigmoid(g) - v) / n
    return loss, dL_df0hat, dL_dg


@dataclass
class OptimizerState:
    """NAdam accumulators: moments shaped like the parameters, step count,
    and the running product of momentum-schedule values."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0
    mu_product: float = 1.0


def init_optimizer(params: ModelParams) -> OptimizerState:
    return OptimizerState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        v_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def _mu(t: int) -> float:
    return NADAM_BETA1 * (1.0 - 0.5 * 0.96 ** (t * NADAM_PSI))


def nadam_step(
    state: OptimizerState,
    params: ModelParams,
    grads: Gradients,
    lr: float,
) -> tuple[ModelParams, OptimizerState]:
    """One NAdam update; returns fresh params and state (inputs untouched)."""
    for g in (*grads.weights, *grads.biases):
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient")
    t = state.step + 1
    mu_t = _mu(t)
    mu_next = _mu(t + 1)
    mu_product = state.mu_product * mu_t
    g_scale = lr * (1.0 - mu_t) / (1.0 - mu_product)
    m_scale = lr * mu_next / (1.0 - mu_product * mu_next)
    v_correction = 1.0 - NADAM_BETA2**t

    def update(p, m, v, g):
        m_new = NADAM_BETA1 * m + (1.0 - NADAM_BETA1) * g
        v_new = NADAM_BETA2 * v + (1.0 - NADAM_BETA2) * g * g
        denom = np.sqrt(v_new / v_correction) + NADAM_EPS
        p_new = p - g_scale * g / denom - m_scale * m_new / denom
        return p_new, m_new, v_new

    new_w, new_mw, new_vw = [], [], []
    for p, m, v, g in zip(params.weights, state.m_weights, state.v_weights,
                          grads.weights):
        a, b, c = update(p, m, v, g)
        new_w.append(a), new_mw.append(b), new_vw.append(c)
    new_b, new_mb, new_vb = [], [], []
    for p, m, v, g in zip(params.biases, state.m_biases, state.v_biases,
                          grads.biases):
        a, b, c = update(p, m, v, g)
        new_b.append(a), new_mb.append(b), new_vb.append(c)
    new_params = ModelParams(new_w, new_b, params.norm)
    new_state = OptimizerState(new_mw, new_vw, new_mb, new_vb,
                               step=t, mu_product=mu_product)
    return new_params, new_state


@dataclass
class SchedulerState:
    """Plateau tracker; ``current_lr`` is the live learning rate."""

    current_lr: float
    patience_lr: int = 5
    lr_factor: float = 0.2
    patience_stop: int = 10
    best_metric: float = -np.inf
    epochs_since_improve: int = 0
    stopped: bool = False


def scheduler_update(state: SchedulerState, epoch_metric: float) -> str:
    """Feed one epoch's validation metric; returns continue|reduce_lr|stop."""
    if not np.isfinite(epoch_metric):
        raise ValueError("epoch metric must be finite")
    if state.stopped:
        return "stop"
    if epoch_metric > state.best_metric:
        state.best_metric = epoch_metric
        state.epochs_since_improve = 0
        return "continue"
    state.epochs_since_improve += 1
    if state.epochs_since_improve >= state.patience_stop:
        state.stopped = True
        return "stop"
    if state.epochs_since_improve == state.patience_lr:
        state.current_lr *= state.lr_factor
        return "reduce_lr"
    return "continue"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int          # 1-based
    train_loss: float
    val_metric: float
    lr: float           # rate in effect during the epoch's updates
    event: str          # none | reduce_lr | stop


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_val_metric(self) -> float | None:
        return max((r.val_metric for r in self.records), default=None)

    def to_csv_text(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss:.10g},{r.val_metric:.10g},"
                         f"{r.lr:.10g},{r.event}")
        return "\n".join(lines) + "\n"


def validation_metric(params: ModelParams, val_dataset: Dataset) -> float:
    """Accurately-processed fraction pooled over all validation frames."""
    pooled = PitchErrorCounts(0, 0, 0, 0, 0, 0)
    for utt in val_dataset.utterances:
        pred, _ = predict_f0(params, utt.features())
        pooled = pooled + pitch_error_counts(pred, utt.f0)
    if pooled.total == 0:
        raise ValueError("validation dataset has no frames")
    return pooled.accurately_processed


def train(
    train_table: FrameTable,
    val_dataset: Dataset,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    """Full training loop; returns the best-validation params and history.

    Per epoch the frame table is re-permuted with seed
    ``config.seed + epoch``, consumed in batches (final partial batch
    included), and validated with the accurately-processed metric; the
    plateau scheduler drives lr reductions and early stopping.  The
    returned parameters are the copy that achieved the best validation
    metric, not the last epoch's.
    """
    if train_table.n_rows == 0:
        raise ValueError("empty training table")
    if len(val_dataset) == 0:
        raise ValueError("empty validation dataset")
    if model_config.input_dim != train_table.rows.shape[1]:
        raise ValueError(
            f"model input_dim {model_config.input_dim} != "
            f"frame width {train_table.rows.shape[1]}")

    params = init_params(model_config, train_config.seed)
    params.norm = compute_norm_stats(train_table)
    inputs = params.norm.normalize_inputs(train_table.rows)
    targets = np.where(train_table.voiced,
                       params.norm.normalize_logf0(train_table.target_logf0), 0.0)
    voiced = train_table.voiced

    opt = init_optimizer(params)
    sched = SchedulerState(
        current_lr=train_config.lr,
        patience_lr=train_config.patience_lr,
        lr_factor=train_config.lr_factor,
        patience_stop=train_config.patience_stop,
    )
    history = TrainHistory()
    best_params = params.copy()
    best_metric = -np.inf
    n = train_table.n_rows

    for epoch in range(train_config.max_epochs):
        epoch_lr = sched.current_lr
        perm = np.random.default_rng(train_config.seed + epoch).permutation(n)
        loss_sum = 0.0
        for batch_idx, start in enumerate(range(0, n, train_config.batch_size)):
            idx = perm[start:start + train_config.batch_size]
            f0hat, g, cache = forward(
                params, inputs[idx], train_mode=True,
                dropout=model_config.dropout,
                dropout_seed=[train_config.seed, epoch, batch_idx],
            )
            loss, d_f0hat, d_g = composite_loss(
                f0hat, g, targets[idx], voiced[idx], train_config.alpha)
            grads = backward(params, cache, d_f0hat, d_g)
            params, opt = nadam_step(opt, params, grads, epoch_lr)
            loss_sum += loss * len(idx)
        train_loss = loss_sum / n

        metric = validation_metric(params, val_dataset)
        if metric > best_metric:
            best_metric = metric
            best_params = params.copy()
        action = scheduler_update(sched, metric)
        event = action if action != "continue" else "none"
        history.records.append(EpochRecord(
            epoch=epoch + 1, train_loss=train_loss, val_metric=metric,
            lr=epoch_lr, event=event))
        if action == "stop":
            break
    return best_params, history
