"""Windowed adjoint training of closure models on snapshot data.

Training data is a uniformly sampled trajectory of the reference model. Each
iteration draws a batch of short windows (six data steps), solves the
augmented system over every window from the reference state at the window
start, and supervises the three states two, four and six steps in. Gradients
come from the adjoint sweeps in :mod:`neuralclosure.closure` and drive an
RMSprop update with exponentially decaying learning rate.

Validation is a genuine rollout: the model is integrated across the held-out
span from the reference state at its start and compared against the held-out
snapshots, never re-anchored in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .closure import (
    AugmentedSystem,
    adjoint_gradient,
    forward_augmented,
)
from .integrate import DenseTrajectory, IntegrationError, RK4Fixed, StepperSpec
from .linalg import Vec


# ---------------------------------------------------------------------------
# Snapshot data
# ---------------------------------------------------------------------------


class SnapshotDataset:
    """Uniformly spaced snapshots of a trajectory: times (N,), states (N, d)."""

    def __init__(self, times, states):
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        if self.times.ndim != 1 or self.times.size < 2:
            raise ValueError("need at least two snapshot times")
        if self.states.shape[0] != self.times.size or self.states.ndim != 2:
            raise ValueError("states must be (n_times, state_dim)")
        steps = np.diff(self.times)
        dt = steps[0]
        if dt <= 0.0 or np.any(np.abs(steps - dt) > 1e-12 * max(1.0, abs(dt))):
            raise ValueError("snapshot times must be uniformly increasing")
        self.dt = float(dt)

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def window(self, i0: int, n_steps: int) -> "SnapshotDataset":
        if i0 < 0 or i0 + n_steps >= self.times.size:
            raise ValueError("window exceeds the dataset")
        sl = slice(i0, i0 + n_steps + 1)
        return SnapshotDataset(self.times[sl], self.states[sl])

    def restrict(self, t_lo: float, t_hi: float) -> "SnapshotDataset":
        tol = 1e-9 * max(1.0, abs(self.dt))
        keep = (self.times >= t_lo - tol) & (self.times <= t_hi + tol)
        return SnapshotDataset(self.times[keep], self.states[keep])

    def interpolant(self) -> DenseTrajectory:
        """C1 cubic Hermite through the snapshots, slopes by central differences."""
        t, u = self.times, self.states
        f = np.empty_like(u)
        f[1:-1] = (u[2:] - u[:-2]) / (2.0 * self.dt)
        f[0] = (u[1] - u[0]) / self.dt
        f[-1] = (u[-1] - u[-2]) / self.dt
        traj = DenseTrajectory()
        for i in range(t.size - 1):
            traj.append(t[i], t[i + 1], u[i], u[i + 1], f[i], f[i + 1])
        return traj

    def history_fn(self) -> Callable[[float], Vec]:
        """Interpolant clamped to the covered span (history for early windows)."""
        traj = self.interpolant()
        lo, hi = self.t_start, self.t_end
        return lambda s: traj.eval(min(max(s, lo), hi))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossSpec:
    """Data-time loss averaged over the supervised states of a window.

    ``time_avg_l2`` is the mean Euclidean norm of the state residuals;
    ``depth_avg_l2`` divides each norm by sqrt(n_depth) so columns report a
    per-depth-cell magnitude. ``positivity_weight`` adds
    w * sum(min(pred, 0)^2) per supervised state, discouraging negative
    concentrations without constraining the model.
    """

    kind: str = "time_avg_l2"
    positivity_weight: float = 0.0
    n_depth: int = 1

    def __post_init__(self):
        if self.kind not in ("time_avg_l2", "depth_avg_l2"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "depth_avg_l2" and self.n_depth < 1:
            raise ValueError("depth_avg_l2 needs n_depth >= 1")

    def _scale(self) -> float:
        return math.sqrt(self.n_depth) if self.kind == "depth_avg_l2" else 1.0

    def total(self, preds, targets) -> float:
        preds = np.asarray(preds, dtype=float)
        targets = np.asarray(targets, dtype=float)
        norms = np.linalg.norm(preds - targets, axis=1) / self._scale()
        out = float(np.mean(norms))
        if self.positivity_weight != 0.0:
            neg = np.minimum(preds, 0.0)
            out += self.positivity_weight * float(np.mean(np.sum(neg * neg, axis=1)))
        return out

    def cotangents(self, preds, targets):
        preds = np.asarray(preds, dtype=float)
        targets = np.asarray(targets, dtype=float)
        r = preds - targets
        norms = np.linalg.norm(r, axis=1)
        m = preds.shape[0]
        safe = np.where(norms > 0.0, norms, 1.0)
        cot = r / (m * self._scale() * safe[:, None])
        cot[norms == 0.0] = 0.0
        if self.positivity_weight != 0.0:
            cot = cot + self.positivity_weight * 2.0 * np.minimum(preds, 0.0) / m
        return cot


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class RmspropState:
    """Running second-moment accumulator; step counts completed updates."""

    s: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n_params: int) -> "RmspropState":
        return cls(s=np.zeros(n_params), step=0)


def lr_at(lr0: float, decay_rate: float, decay_steps: int, step: int) -> float:
    return lr0 * decay_rate ** (step / decay_steps)


def rmsprop_update(state: RmspropState, params: Vec, grad: Vec, lr: float,
                   rho: float = 0.9, eps: float = 1e-7) -> Vec:
    state.s = rho * state.s + (1.0 - rho) * grad * grad
    state.step += 1
    return params - lr * grad / (np.sqrt(state.s) + eps)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def iterations_per_epoch(n_steps: int, batch_size: int, window_steps: int = 6) -> int:
    """One pass worth of windows, plus one: ceil(N / (batch * window)) + 1."""
    return math.ceil(n_steps / (batch_size * window_steps)) + 1


def admissible_starts(n_steps: int, window_steps: int = 6, stride: int = 2):
    """Window start indices: every ``stride``-th snapshot with room for a window."""
    last = n_steps - window_steps
    if last < 0:
        raise ValueError("dataset shorter than one training window")
    return np.arange(0, last + 1, stride)

def sample_batch(rng: np.random.Generator, n_steps: int, batch_size: int,
                 window_steps: int = 6, stride: int = 2):
    starts = admissible_starts(n_steps, window_steps, stride)
    return rng.choice(starts, size=batch_size, replace=batch_size > starts.size)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def rmse_series(pred, truth) -> float:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def avg_crosscorr(pred, truth) -> float:
    """Zero-lag Pearson correlation per component, averaged; nan if any
    component of either series has zero variance."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    a = pred - pred.mean(axis=0)
    b = truth - truth.mean(axis=0)
    sa = np.sqrt(np.sum(a * a, axis=0))
    sb = np.sqrt(np.sum(b * b, axis=0))
    denom = sa * sb
    if np.any(denom == 0.0):
        return float("nan")
    return float(np.mean(np.sum(a * b, axis=0) / denom))


def evaluate_rollout(sys: AugmentedSystem, params: Vec, dataset: SnapshotDataset,
                     stepper: StepperSpec,
                     history: Callable[[float], Vec] | None = None):
    """Free rollout from the dataset's first state; returns (preds, rmse, corr).

    ``preds`` covers every dataset time including the anchored first one.
    """
    run = forward_augmented(sys, params, (dataset.t_start, dataset.t_end),
                            stepper, history=history, u0=dataset.states[0])
    preds = np.stack([run.u_at(min(t, run.t1)) for t in dataset.times])
    return preds, rmse_series(preds, dataset.states), avg_crosscorr(preds, dataset.states)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int
    batch_size: int
    lr0: float
    adjoint_dt: float
    decay_rate: float = 0.97
    decay_steps: int | None = None      # default: one epoch of iterations
    iters_per_epoch: int | None = None  # default: iterations_per_epoch(...)
    window_steps: int = 6
    supervise_stride: int = 2
    grad_mode: str = "sum"              # "sum" or "mean" over the batch
    seed: int = 0

    def __post_init__(self):
        if self.grad_mode not in ("sum", "mean"):
            raise ValueError("grad_mode must be 'sum' or 'mean'")
        if self.window_steps % self.supervise_stride != 0:
            raise ValueError("window_steps must be a multiple of supervise_stride")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    lr: float
    val_loss: float = float("nan")
    val_rmse: float = float("nan")
    val_corr: float = float("nan")


@dataclass
class TrainResult:
    params: np.ndarray
    opt_state: RmspropState
    history: list[EpochRecord] = field(default_factory=list)
    diverged: bool = False
    epochs_run: int = 0


def window_gradient(sys: AugmentedSystem, params: Vec, dataset: SnapshotDataset,
                    start: int, settings: TrainSettings, loss_spec: LossSpec,
                    stepper: StepperSpec, history: Callable[[float], Vec]):
    """Forward + adjoint over one training window; returns (loss, grad)."""
    w = settings.window_steps
    stride = settings.supervise_stride
    t0 = float(dataset.times[start])
    t1 = float(dataset.times[start + w])
    sup = SnapshotDataset(dataset.times[start + stride:start + w + 1:stride],
                          dataset.states[start + stride:start + w + 1:stride])
    run = forward_augmented(sys, params, (t0, t1), stepper, history=history,
                            u0=dataset.states[start])
    preds = np.stack([run.u_at(t) for t in sup.times])
    loss = loss_spec.total(preds, sup.states)
    adj = adjoint_gradient(sys, params, run, sup, loss_spec,
                           RK4Fixed(settings.adjoint_dt))
    return loss, adj.grad


def train(sys: AugmentedSystem, dataset: SnapshotDataset, params0: Vec,
          settings: TrainSettings, loss_spec: LossSpec, stepper: StepperSpec,
          val_dataset: SnapshotDataset | None = None,
          val_history: Callable[[float], Vec] | None = None,
          opt_state: RmspropState | None = None,
          rng: np.random.Generator | None = None,
          start_epoch: int = 0,
          callback: Callable[[int, TrainResult], None] | None = None) -> TrainResult:
    """Run windowed adjoint training; returns final parameters and the log.

    ``opt_state``, ``rng`` and ``start_epoch`` allow a checkpointed run to
    resume mid-stream and reproduce an uninterrupted run bit for bit. On a
    non-finite loss, gradient or parameter the loop stops and flags the
    result as diverged instead of raising.
    """
    params = np.asarray(params0, dtype=float).copy()
    if params.shape != (sys.n_params,):
        raise ValueError(f"params0 shape {params.shape}, expected ({sys.n_params},)")
    state = opt_state if opt_state is not None else RmspropState.fresh(params.size)
    rng = rng if rng is not None else np.random.default_rng(settings.seed)
    iters = settings.iters_per_epoch or iterations_per_epoch(
        dataset.n_steps, settings.batch_size, settings.window_steps)
    decay_steps = settings.decay_steps or iters
    history = dataset.history_fn()
    result = TrainResult(params=params, opt_state=state)

    for epoch in range(start_epoch, settings.epochs):
        epoch_losses = []
        ok = True
        for _ in range(iters):
            starts = sample_batch(rng, dataset.n_steps, settings.batch_size,
                                  settings.window_steps, settings.supervise_stride)
            grad = np.zeros_like(params)
            batch_loss = 0.0
            try:
                for s in starts:
                    loss, g = window_gradient(sys, params, dataset, int(s),
                                              settings, loss_spec, stepper, history)
                    grad += g
                    batch_loss += loss
            except IntegrationError:
                ok = False
                break
            if settings.grad_mode == "mean":
                grad /= len(starts)
            batch_loss /= len(starts)
            if not (np.isfinite(batch_loss) and np.all(np.isfinite(grad))):
                ok = False
                break
            lr = lr_at(settings.lr0, settings.decay_rate, decay_steps, state.step)
            params = rmsprop_update(state, params, grad, lr)
            if not np.all(np.isfinite(params)):
                ok = False
                break
            epoch_losses.append(batch_loss)

        if not ok:
            result.params = params
            result.diverged = True
            result.epochs_run = epoch
            return result

        rec = EpochRecord(epoch=epoch,
                          train_loss=float(np.mean(epoch_losses)),
                          lr=lr_at(settings.lr0, settings.decay_rate,
                                   decay_steps, state.step))
        if val_dataset is not None:
            try:
                preds, rec.val_rmse, rec.val_corr = evaluate_rollout(
                    sys, params, val_dataset, stepper, history=val_history)
                rec.val_loss = loss_spec.total(preds, val_dataset.states)
            except IntegrationError:
                rec.val_loss = float("nan")
                rec.val_rmse = float("nan")
                rec.val_corr = float("nan")
        result.history.append(rec)
        result.params = params
        result.epochs_run = epoch + 1
        if callback is not None:
            callback(epoch, result)
    return result
