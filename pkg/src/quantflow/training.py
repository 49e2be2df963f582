"""Flow training: Adam over the quantile (or mean) negative log-likelihood.

The optimizer state and all gradients live in flat float64 vectors aligned
with FlowModel.params. The Adam update (bias-corrected, with weight decay
folded into the gradient as grad + wd*param before the moment updates) runs
as a single fused pass compiled by numba; element i depends only on element
i, so the parallel kernel is bitwise deterministic.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigError, DivergenceError, NonFiniteValueError
from .features import BatchPlan, FeatureSet, make_batches
from .flow import INFERENCE, TRAINING, FlowModel
from .objective import QuantileSpec, loss_gradient, mean_nll_loss, qnll_loss
from .seeding import STREAM_DROPOUT, STREAM_SHUFFLE, check_seed, derive_seed, stream

LOSS_QUANTILE = "quantile"
LOSS_MEAN = "mean"


@dataclass(frozen=True)
class TrainConfig:
    """Training meta-parameters; defaults are the published flow-stage values."""

    q: float = 0.05
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 9e-5
    weight_decay: float = 1e-6
    dropout: float = 0.3
    blocks: int = 8
    fc_layers: int = 2
    fc_neurons: int = 512
    clamp: float = 3.0
    seed: int = 0
    standardize: bool = False
    loss_kind: str = LOSS_QUANTILE

    def __post_init__(self):
        if not 0.0 <= self.q < 1.0:
            raise ConfigError(f"q must satisfy 0 <= q < 1, got {self.q}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.blocks < 1 or self.fc_layers < 1 or self.fc_neurons < 1:
            raise ConfigError("blocks, fc_layers, fc_neurons must all be >= 1")
        if self.clamp <= 0:
            raise ConfigError(f"clamp must be positive, got {self.clamp}")
        if self.loss_kind not in (LOSS_QUANTILE, LOSS_MEAN):
            raise ConfigError(f"loss_kind must be quantile or mean, got {self.loss_kind!r}")
        check_seed(self.seed)


@dataclass
class AdamState:
    """First/second moments plus step count for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


@numba.njit(parallel=True, fastmath=False, cache=True)
def _adam_kernel(params, grads, m, v, lr, wd, b1, b2, eps, bc1, bc2):  # pragma: no cover
    for i in numba.prange(params.shape[0]):
        g = grads[i] + wd * params[i]
        mi = b1 * m[i] + (1.0 - b1) * g
        vi = b2 * v[i] + (1.0 - b2) * g * g
        m[i] = mi
        v[i] = vi
        params[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)


@numba.njit(parallel=True, fastmath=False, cache=True)
def _count_nonfinite(values):  # pragma: no cover
    bad = 0
    for i in numba.prange(values.shape[0]):
        if not math.isfinite(values[i]):
            bad += 1
    return bad


def adam_step(params, grads, state: AdamState, lr: float, weight_decay: float) -> AdamState:
    """One bias-corrected Adam update, in place on params.

    Weight decay enters as an additive L2 gradient term before the moment
    updates. A non-finite gradient rejects the step.
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ConfigError("parameter/gradient/state shapes disagree")
    if _count_nonfinite(grads):
        raise DivergenceError("non-finite gradient; step rejected")
    t = state.step + 1
    _adam_kernel(
        params,
        grads,
        state.m,
        state.v,
        lr,
        weight_decay,
        state.beta1,
        state.beta2,
        state.eps,
        1.0 - state.beta1**t,
        1.0 - state.beta2**t,
    )
    state.step = t
    return state


@dataclass(frozen=True)
class Standardizer:
    """Per-dimension shift/scale fit on training data."""

    shift: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.shift


def standardize_fit(data: np.ndarray) -> Standardizer:
    """Fit mean-0/variance-1 transform; constant dimensions keep scale 1."""
    if data.shape[0] < 2:
        raise ConfigError("standardization needs at least 2 samples")
    shift = data.mean(axis=0)
    scale = data.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    return Standardizer(shift=shift, scale=scale)


def standardize_fit_apply(fs: FeatureSet) -> tuple[Standardizer, np.ndarray]:
    transform = standardize_fit(fs.as_float64())
    return transform, transform.apply(fs.as_float64())


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    min_ll: float
    median_ll: float
    seconds: float
    checkpoint: str | None = None


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def lines(self, include_seconds: bool = True) -> list[str]:
        out = []
        for r in self.records:
            fields = [
                f"epoch={r.epoch}",
                f"loss={r.loss!r}",
                f"min_ll={r.min_ll!r}",
                f"median_ll={r.median_ll!r}",
            ]
            if include_seconds:
                fields.append(f"seconds={r.seconds:.3f}")
            out.append(" ".join(fields))
        return out

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def train(
    features: FeatureSet,
    cfg: TrainConfig,
    checkpoint_dir=None,
    progress=None,
) -> tuple[FlowModel, TrainLog]:
    """Fit a flow to the feature set; deterministic given cfg.seed.

    With checkpoint_dir set, the model is checkpointed after every epoch
    (epoch_NNN.qodm). The returned model is in inference mode.

    BLAS pools are capped to one thread for the duration of the loop:
    training interleaves small matmuls with fused optimizer kernels, and
    spin-waiting BLAS workers otherwise fight them for cores.
    """
    with threadpool_limits(limits=1, user_api="blas"):
        return _train_loop(features, cfg, checkpoint_dir, progress)


def _train_loop(features, cfg, checkpoint_dir, progress):
    if features.count < cfg.batch_size:
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds training set size {features.count}"
        )
    model = FlowModel.create(
        dim=features.dim,
        blocks=cfg.blocks,
        fc_layers=cfg.fc_layers,
        fc_neurons=cfg.fc_neurons,
        clamp=cfg.clamp,
        dropout_rate=cfg.dropout,
        seed=cfg.seed,
    )
    data = features.as_float64()
    if cfg.standardize:
        transform = standardize_fit(data)
        model.input_shift = transform.shift
        model.input_scale = transform.scale

    state = AdamState.for_params(model.params)
    spec = QuantileSpec(q=cfg.q)
    shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE)
    log = TrainLog()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    model.mode = TRAINING
    global_step = 0
    wmix_backup = [w.copy() for w in model.mixing_matrices()]
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        plan = BatchPlan(batch_size=cfg.batch_size, shuffle_seed=derive_seed(shuffle_rng))
        epoch_losses = []
        epoch_lls = []
        for batch_no, idx in enumerate(make_batches(features, plan)):
            batch = data[idx]
            rng = stream(cfg.seed, STREAM_DROPOUT, global_step)
            try:
                log_probs = model.log_prob(batch, rng=rng)
            except NonFiniteValueError as exc:
                raise DivergenceError(
                    f"diverged at epoch {epoch}, batch {batch_no}: {exc}",
                    epoch=epoch,
                    batch=batch_no,
                ) from exc
            if not np.isfinite(log_probs).all():
                raise DivergenceError(
                    f"non-finite log-likelihood at epoch {epoch}, batch {batch_no}",
                    epoch=epoch,
                    batch=batch_no,
                )
            if cfg.loss_kind == LOSS_QUANTILE:
                loss = qnll_loss(log_probs, spec)
                upstream = loss_gradient(loss, len(idx))
                loss_value = loss.value
            else:
                loss_value = mean_nll_loss(log_probs)
                upstream = np.full(len(idx), -1.0 / len(idx))
            if not math.isfinite(loss_value):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no}",
                    epoch=epoch,
                    batch=batch_no,
                )
            grads = model.backward(batch, upstream)
            adam_step(model.params, grads, state, cfg.learning_rate, cfg.weight_decay)
            _reproject_mixing(model, wmix_backup)
            if _count_nonfinite(model.params):
                raise DivergenceError(
                    f"non-finite parameters after epoch {epoch}, batch {batch_no}",
                    epoch=epoch,
                    batch=batch_no,
                )
            epoch_losses.append(loss_value)
            epoch_lls.append(log_probs)
            global_step += 1
        lls = np.concatenate(epoch_lls)
        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(epoch_losses)),
            min_ll=float(lls.min()),
            median_ll=float(np.median(lls)),
            seconds=time.perf_counter() - t0,
        )
        if ckpt_dir is not None:
            path = ckpt_dir / f"epoch_{epoch:03d}.qodm"
            model.save(path)
            record.checkpoint = str(path)
        log.records.append(record)
        if progress is not None:
            progress(record)
    model.mode = INFERENCE
    model._cache = None
    return model, log


def _reproject_mixing(model: FlowModel, backup: list[np.ndarray]) -> None:
    """Reject a step for any mixing matrix it made singular (never expected)."""
    for wmix, saved in zip(model.mixing_matrices(), backup):
        sign, _ = np.linalg.slogdet(wmix)
        if sign == 0 or not np.isfinite(wmix).all():
            wmix[:] = saved
        else:
            saved[:] = wmix
