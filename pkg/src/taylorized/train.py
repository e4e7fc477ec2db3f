"""SGD with step schedules and clipping, and the paired-trajectory runner.

``paired_run`` trains the full network and its order-``k`` expansions from one
shared initialization over one shared minibatch index sequence, with the same
learning-rate schedule and clipping, recording checkpoints for all of them on
the same steps.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .metrics import demean_logits
from .models import (Architecture, ParamSet, anchor_series, forward, init_params, loss_and_grad,
                     loss_eval, save_params, slice_series)
from .tensor import RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 0.1
    schedule: tuple = ()          # ((step, multiplier), ...)
    clip: float | None = None
    batch_size: int = 64
    steps: int = 1000
    loss: str = "cross_entropy"
    checkpoint_every: int | None = None   # default: steps // 100

    def __post_init__(self):
        steps = [s for s, _ in self.schedule]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("schedule steps must be strictly increasing")
        if any(not 0 < m <= 1 for _, m in self.schedule):
            raise ValueError("schedule multipliers must lie in (0, 1]")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip norm must be positive")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be >= 1 and steps >= 0")


def lr_at(config: OptimizerConfig, step: int) -> float:
    lr = config.lr
    for trigger, mult in config.schedule:
        if trigger <= step:
            lr *= mult
    return lr


def steps_per_epoch(n_train: int, batch_size: int) -> int:
    return -(-n_train // batch_size)


def epochs_to_steps(epochs: float, n_train: int, batch_size: int) -> int:
    return int(round(epochs * steps_per_epoch(n_train, batch_size)))


def global_norm(grads: dict) -> float:
    """Euclidean norm over all gradient entries, scaled to avoid overflow."""
    top = max((float(np.max(np.abs(g))) for g in grads.values() if np.size(g)), default=0.0)
    if top == 0.0 or not np.isfinite(top):
        return top
    return top * float(np.sqrt(sum(float(np.sum((g / top) ** 2)) for g in grads.values())))


def sgd_step(params: ParamSet, grads: dict, lr: float, clip: float | None = None) -> ParamSet:
    """``theta <- theta - lr * g`` with ``g`` rescaled to norm ``clip`` if larger."""
    norm = global_norm(grads)
    if not np.isfinite(norm):
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        raise FloatingPointError(f"non-finite gradient in {bad}" if bad else "gradient norm overflowed")
    factor = clip / norm if clip is not None and norm > clip else 1.0
    new = {k: params.theta[k] - lr * (factor * grads[k] if factor != 1.0 else grads[k])
           for k in params.theta}
    return params.with_theta(new)


class MinibatchStream:
    """Replayable minibatch indices: one seeded permutation per epoch, split
    into ``ceil(n / batch_size)`` batches (the last one may be short)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n < 1:
            raise ValueError("cannot draw minibatches from an empty dataset")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.per_epoch = steps_per_epoch(n, batch_size)
        self._cache: dict = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._cache:
            self._cache = {epoch: RngStream(self.seed, 10_000 + epoch).generator().permutation(self.n)}
        return self._cache[epoch]

    def batch(self, step: int) -> np.ndarray:
        epoch, b = divmod(step, self.per_epoch)
        return self._perm(epoch)[b * self.batch_size:(b + 1) * self.batch_size]

    def indices(self, steps: int) -> list:
        return [self.batch(s) for s in range(steps)]


def checkpoint_steps(config: OptimizerConfig) -> list:
    every = config.checkpoint_every or max(1, config.steps // 100)
    steps = set(range(0, config.steps + 1, every)) | {config.steps}
    for trigger, _ in config.schedule:
        for s in (trigger, trigger + 1):
            if 0 <= s <= config.steps:
                steps.add(s)
    return sorted(steps)


def model_tag(k: int) -> str:
    return "full" if k == 0 else f"k{k}"


@dataclass
class TrajectoryRecord:
    tag: str
    order: int
    layout: list                 # [(name, shape), ...]
    theta0: np.ndarray
    steps: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    test_logits: list = field(default_factory=list)   # demeaned
    diverged_at: int | None = None

    def params_at(self, i: int, scheme: str = "standard") -> ParamSet:
        """Rebuild the :class:`ParamSet` stored at checkpoint index ``i``."""
        return ParamSet(_unflatten(self.thetas[i], self.layout), _unflatten(self.theta0, self.layout), scheme)


def _unflatten(flat: np.ndarray, layout: list) -> dict:
    out, pos = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        out[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    return out


def _evaluate(arch, params, k, data: Dataset, loss_kind, caches=(None, None)) -> tuple:
    train_logits = forward(arch, params, data.x_train, k, caches[0])
    test_logits = forward(arch, params, data.x_test, k, caches[1])
    train_loss = loss_eval(loss_kind, train_logits, data.y_train)
    acc = float(np.mean(np.argmax(test_logits, axis=1) == data.y_test))
    return train_loss, acc, test_logits


def train_model(arch: Architecture, params0: ParamSet, k: int, config: OptimizerConfig,
                data: Dataset, batches: list, ckpt_steps: list) -> TrajectoryRecord:
    """Train one model (``k = 0`` full, else order-``k``) along ``batches``."""
    layout = [(n, v.shape) for n, v in params0.theta.items()]
    rec = TrajectoryRecord(model_tag(k), k, layout, params0.flat0())
    params = params0.copy()
    wanted = set(ckpt_steps)
    last = None
    caches = (None, None)
    if k and arch.kind == "mlp":
        caches = (anchor_series(arch, params0, data.x_train, k),
                  anchor_series(arch, params0, data.x_test, k))

    def record(step, params):
        nonlocal last
        try:
            loss, acc, logits = _evaluate(arch, params, k, data, config.loss, caches)
        except FloatingPointError:
            loss = float("nan")
        if not np.isfinite(loss):
            return False
        last = (params.flat(), loss, acc, demean_logits(logits))
        _append(rec, step, last)
        return True

    with np.errstate(over="ignore", invalid="ignore"):
        if 0 in wanted:
            record(0, params)
        for step in range(config.steps):
            xb = data.x_train[batches[step]]
            yb = data.y_train[batches[step]]
            loss, grads, _ = loss_and_grad(arch, params, xb, yb, k, config.loss,
                                           slice_series(caches[0], batches[step]))
            try:
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite minibatch loss")
                params = sgd_step(params, grads, lr_at(config, step), config.clip)
            except FloatingPointError as err:
                log.warning("%s diverged at step %d: %s", rec.tag, step, err)
                rec.diverged_at = step
                break
            if step + 1 in wanted and not record(step + 1, params):
                rec.diverged_at = step + 1
                break
    if rec.diverged_at is not None:
        # frozen at the last finite checkpoint for the remaining steps
        for s in ckpt_steps:
            if s > (rec.steps[-1] if rec.steps else -1) and last is not None:
                _append(rec, s, last)
    return rec


def _append(rec, step, state):
    theta, loss, acc, logits = state
    rec.steps.append(step)
    rec.thetas.append(theta)
    rec.train_loss.append(loss)
    rec.test_acc.append(acc)
    rec.test_logits.append(logits)


def paired_run(arch: Architecture, orders, config: OptimizerConfig, data: Dataset,
               seed: int = 0, scheme: str = "standard", threads: int = 1,
               params0: ParamSet | None = None) -> dict:
    """Train the full model and one Taylorized model per order in ``orders``.

    Returns ``{tag: TrajectoryRecord}`` with ``"full"`` first.
    """
    orders = sorted(set(orders))
    if any(not 1 <= k <= 8 for k in orders):
        raise ValueError("Taylor orders must lie in 1..8")
    data.check_nonempty()
    if data.x_train.shape[1:] != arch.input_shape:
        raise ValueError(f"dataset inputs {data.x_train.shape[1:]} do not match architecture {arch.input_shape}")
    if params0 is None:
        params0 = init_params(arch, scheme, seed)
    batches = MinibatchStream(data.n_train, config.batch_size, seed).indices(config.steps)
    ckpts = checkpoint_steps(config)
    ks = [0] + orders
    run = lambda k: train_model(arch, params0, k, config, data, batches, ckpts)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            recs = list(pool.map(run, ks))
    else:
        recs = [run(k) for k in ks]
    return {r.tag: r for r in recs}


# ----------------------------------------------------------------- outputs

def write_trajectory_csv(records: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "model_tag", "train_loss", "test_acc"])
        steps = next(iter(records.values())).steps
        for i, step in enumerate(steps):
            for tag, rec in records.items():
                w.writerow([step, tag, repr(rec.train_loss[i]), repr(rec.test_acc[i])])


def write_checkpoint(directory, rec: TrajectoryRecord, i: int, scheme: str = "standard") -> Path:
    """Write ``<tag>_step<N>.params`` plus a JSON sidecar with step metrics."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"{rec.tag}_step{rec.steps[i]}"
    save_params(rec.params_at(i, scheme), stem.with_suffix(".params"))
    meta = {"model_tag": rec.tag, "step": rec.steps[i], "train_loss": rec.train_loss[i],
            "test_acc": rec.test_acc[i], "diverged_at": rec.diverged_at}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return stem.with_suffix(".params")
