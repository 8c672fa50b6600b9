"""Update rules (SGD, path-normalized SGD, Adam variants) and the train loop."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import compute, pathnorm
from .graph import GraphError, SharedWeightNet

DEFAULT_EPS = 1e-8
DIVERGE_LOSS = 1e6

OPTIMIZERS = ("sgd", "adam", "path_sgd", "path_adam")

# Independent RNG streams derived from the run seed.
STREAM_INIT = 0
STREAM_DATA = 1
STREAM_TASK = 2


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator for a (seed, stream, ...) key.  Stateless: the batch at step
    s is a pure function of (seed, s), so resumed runs replay the same data."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def init_uniform(net: SharedWeightNet, rng: np.random.Generator,
                 half_width: float,
                 per_block: dict[str, float] | None = None) -> np.ndarray:
    """All parameters i.i.d. uniform on [-half_width, half_width].

    per_block overrides the half width for named weight blocks of the
    recurrent layout, e.g. {"rec1": 0.3, "out": 0.05}; blocks not named keep
    the global width.  Draws one value per parameter in packing order, so an
    empty or all-equal override reproduces the plain call bit for bit.
    """
    if not per_block:
        return rng.uniform(-half_width, half_width, size=net.num_params)
    if net.rnn is None:
        raise GraphError("per-block init needs a recurrent layout")
    unknown = sorted(set(per_block) - set(net.rnn.slices))
    if unknown:
        raise GraphError(f"per-block init: unknown blocks {unknown}")
    p = np.empty(net.num_params)
    for name, (sl, _) in net.rnn.slices.items():
        r = float(per_block.get(name, half_width))
        p[sl] = rng.uniform(-r, r, sl.stop - sl.start)
    return p


def init_identity(net: SharedWeightNet, rng: np.random.Generator,
                  half_width: float = 0.01) -> np.ndarray:
    """Identity recurrent matrices, everything else uniform on
    [-half_width, half_width].  Requires square recurrent blocks."""
    if net.rnn is None:
        raise GraphError("init_identity needs a recurrent layout")
    layout = net.rnn
    p = rng.uniform(-half_width, half_width, size=net.num_params)
    for name, (sl, shape) in layout.slices.items():
        if name.startswith("rec"):
            if shape[0] != shape[1]:
                raise GraphError("init_identity: recurrent block is not square")
            p[sl] = np.eye(shape[0]).reshape(-1)
    return p


@dataclass
class OptimizerState:
    """Optimizer kind plus everything its update needs.

    Adam moments are allocated lazily on the first step so a fresh state can
    be built before the parameter count is known.
    """

    kind: str = "sgd"
    eta: float = 0.01
    kappa_mode: str = "k1"
    eps: float = DEFAULT_EPS        # floor applied to kappa
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    t: int = 0                      # Adam timestep
    m1: np.ndarray | None = None    # first moment
    m2: np.ndarray | None = None    # second moment

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise GraphError(f"unknown optimizer {self.kind!r}")
        if self.kappa_mode not in pathnorm.KAPPA_MODES:
            raise GraphError(f"unknown kappa mode {self.kappa_mode!r}")
        if self.eta <= 0 or self.eps <= 0:
            raise GraphError("eta and eps must be positive")

    @property
    def uses_kappa(self) -> bool:
        return self.kind in ("path_sgd", "path_adam")

    @property
    def uses_adam(self) -> bool:
        return self.kind in ("adam", "path_adam")


def sgd_step(p: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    return p - eta * g


def path_sgd_step(net: SharedWeightNet, p: np.ndarray, g: np.ndarray, eta: float,
                  kappa_mode: str = "k1", eps: float = DEFAULT_EPS,
                  kappa: np.ndarray | None = None) -> np.ndarray:
    """p - eta * g / max(kappa, eps), with kappa evaluated at the current p.

    Pass a precomputed ``kappa`` only to amortize recomputation across steps;
    by default it is computed fresh here so it can never be stale.
    """
    if kappa is None:
        kappa = pathnorm.preconditioner(net, p, kappa_mode)
    return p - eta * g / np.maximum(kappa, eps)


def _adam_direction(state: OptimizerState, g: np.ndarray) -> tuple[np.ndarray, OptimizerState]:
    """One Adam moment update; returns the (unscaled) step direction and the
    advanced state."""
    if state.m1 is None:
        state = dataclasses.replace(state, m1=np.zeros_like(g), m2=np.zeros_like(g))
    t = state.t + 1
    m1 = state.beta1 * state.m1 + (1 - state.beta1) * g
    m2 = state.beta2 * state.m2 + (1 - state.beta2) * g * g
    mhat = m1 / (1 - state.beta1 ** t)
    vhat = m2 / (1 - state.beta2 ** t)
    direction = mhat / (np.sqrt(vhat) + state.eps_adam)
    return direction, dataclasses.replace(state, t=t, m1=m1, m2=m2)


def adam_step(p: np.ndarray, g: np.ndarray,
              state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    direction, state = _adam_direction(state, g)
    return p - state.eta * direction, state


def path_adam_step(net: SharedWeightNet, p: np.ndarray, g: np.ndarray,
                   state: OptimizerState,
                   kappa: np.ndarray | None = None) -> tuple[np.ndarray, OptimizerState]:
    """Adam run on the preconditioned gradient g / max(kappa, eps)."""
    if kappa is None:
        kappa = pathnorm.preconditioner(net, p, state.kappa_mode)
    direction, state = _adam_direction(state, g / np.maximum(kappa, state.eps))
    return p - state.eta * direction, state


def apply_update(net: SharedWeightNet, p: np.ndarray, g: np.ndarray,
                 state: OptimizerState,
                 kappa: np.ndarray | None = None) -> tuple[np.ndarray, OptimizerState]:
    """Dispatch one update of the configured kind."""
    if state.kind == "sgd":
        return sgd_step(p, g, state.eta), state
    if state.kind == "adam":
        return adam_step(p, g, state)
    if state.kind == "path_sgd":
        return path_sgd_step(net, p, g, state.eta, state.kappa_mode,
                             state.eps, kappa=kappa), state
    return path_adam_step(net, p, g, state, kappa=kappa)


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    eval_interval: int = 100
    seed: int = 0
    kappa_every: int = 1            # recompute kappa every k steps
    target_loss: float | None = None
    target_test_metric: float | None = None
    record_kappa_ratio: bool = False
    timing: bool = False            # wall_ms per eval row; off keeps output deterministic

    def check(self):
        if self.steps < 0 or self.batch_size < 1:
            raise GraphError("steps must be >= 0 and batch_size >= 1")
        if self.eval_interval < 1 or self.kappa_every < 1:
            raise GraphError("eval_interval and kappa_every must be >= 1")


@dataclass
class TrainResult:
    status: str                     # converged | budget_exhausted | diverged
    params: np.ndarray
    opt: OptimizerState
    steps_done: int
    history: list[dict] = field(default_factory=list)


def _diverged(loss: float, p: np.ndarray) -> bool:
    return (not np.isfinite(loss)) or loss > DIVERGE_LOSS or not np.all(np.isfinite(p))


def train_loop(net: SharedWeightNet, task, config: TrainConfig, p: np.ndarray,
               opt: OptimizerState, start_step: int = 0,
               on_eval=None) -> TrainResult:
    """Minibatch training with periodic evaluation.

    Each step draws its batch from an RNG keyed by (seed, step), evaluates the
    loss and gradient at the pre-update parameters, records a history row when
    the step index is a multiple of eval_interval, then applies the update.
    A final row is recorded at the step budget.  Resuming from (p, opt,
    start_step) therefore reproduces the uninterrupted run exactly.
    """
    config.check()
    p = np.asarray(p, dtype=float).copy()
    status = "budget_exhausted"
    history: list[dict] = []
    kappa_cache: np.ndarray | None = None
    t0 = time.perf_counter()

    def eval_row(step: int, loss: float, metric: float) -> dict:
        row = {
            "step": step,
            "train_loss": loss,
            "train_metric": metric,
            "test_metric": task.evaluate(net, p),
        }
        if config.record_kappa_ratio:
            row["kappa_ratio"] = pathnorm.kappa_ratio(net, p)
        row["wall_ms"] = (time.perf_counter() - t0) * 1000.0 if config.timing else 0.0
        history.append(row)
        if on_eval is not None:
            on_eval(row, p, opt)
        return row

    step = start_step
    while step < config.steps:
        batch = task.train_batch(rng_for(config.seed, STREAM_DATA, step), config.batch_size)
        loss, g, metric = task.loss_and_grad(net, p, batch)
        if _diverged(loss, p):
            status = "diverged"
            break
        if step % config.eval_interval == 0:
            row = eval_row(step, loss, metric)
            if (config.target_test_metric is not None
                    and row["test_metric"] <= config.target_test_metric):
                status = "converged"
                break
        if config.target_loss is not None and loss <= config.target_loss:
            status = "converged"
            break
        if opt.uses_kappa:
            if step % config.kappa_every == 0 or kappa_cache is None:
                kappa_cache = pathnorm.preconditioner(net, p, opt.kappa_mode)
            p, opt = apply_update(net, p, g, opt, kappa=kappa_cache)
        else:
            p, opt = apply_update(net, p, g, opt)
        step += 1

    already_rowed = bool(history) and history[-1]["step"] == step
    if status != "diverged" and not already_rowed:
        batch = task.train_batch(rng_for(config.seed, STREAM_DATA, step), config.batch_size)
        loss, _, metric = task.loss_and_grad(net, p, batch)
        if _diverged(loss, p):
            status = "diverged"
        else:
            eval_row(step, loss, metric)
    return TrainResult(status=status, params=p, opt=opt, steps_done=step, history=history)
