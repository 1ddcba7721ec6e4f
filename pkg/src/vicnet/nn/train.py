"""Mini-batch training with MSE loss, Adam and early stopping."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DataError
from ..rng import stream
from .graph import INPUT, Graph, ParamStore, backward, forward_internal, static_nodes, to_external, to_internal
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    patience: int = 30
    max_epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: ParamStore
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0


def _frontier(graph: Graph, static: set[str]) -> list[str]:
    """Static nodes whose outputs feed a non-static node."""
    used = []
    for n in graph.nodes:
        if n.name in static:
            continue
        for i in n.inputs:
            if i in static and i not in used:
                used.append(i)
    return used


def _precompute(graph, params, x, names, batch):
    """Eval-mode outputs of ``names`` for all samples, internal layout."""
    if names == [INPUT]:
        return {INPUT: to_internal(x)}
    parts = {k: [] for k in names}
    for s in range(0, x.shape[0], batch):
        out = forward_internal(graph, params, {INPUT: to_internal(x[s:s + batch])}, "eval", keep=names)
        for k in names:
            parts[k].append(out[k])
    return {k: np.concatenate(v) for k, v in parts.items()}


def _mse_eval(graph, params, feeds, y, batch):
    n = y.shape[0]
    sq = 0.0
    for s in range(0, n, batch):
        part = {k: v[s:s + batch] for k, v in feeds.items()}
        pred = forward_internal(graph, params, part, "eval")[graph.output]
        sq += float(np.sum((to_external(pred).astype(np.float64) - y[s:s + batch]) ** 2))
    return sq / y.size


def predict(graph: Graph, params: ParamStore, x: np.ndarray, batch: int = 256) -> np.ndarray:
    """Eval-mode forward in batches; (N, C, L) in, (N, C_out, L_out) out."""
    dtype = next(iter(params.values.values())).dtype if params.values else x.dtype
    outs = []
    for s in range(0, x.shape[0], batch):
        feeds = {INPUT: to_internal(x[s:s + batch].astype(dtype, copy=False))}
        outs.append(to_external(forward_internal(graph, params, feeds, "eval")[graph.output]))
    if not outs:
        return np.zeros((0,) + tuple(graph.output_shape), dtype=dtype)
    return np.concatenate(outs)


def train(graph: Graph, params: ParamStore, train_set, val_set, cfg: TrainConfig) -> TrainResult:
    """Fit ``params`` (a copy; the argument is left untouched) to MSE.

    ``train_set`` and ``val_set`` are ``(inputs, targets)`` pairs of shapes
    (N, C_in, L) and (N, *output_shape). Training stops once the validation
    MSE has not decreased for ``cfg.patience`` consecutive epochs, or after
    ``cfg.max_epochs``; the parameters of the best validation epoch are
    returned.

    Nodes that do not depend on any trainable parameter are evaluated once
    up front (eval mode) and fed to every step.
    """
    x_tr, y_tr = train_set
    x_va, y_va = val_set
    if len(x_tr) == 0 or len(x_va) == 0:
        raise DataError("training and validation sets must be nonempty")
    if len(x_tr) != len(y_tr) or len(x_va) != len(y_va):
        raise DataError("inputs and targets differ in sample count")
    params = params.copy()
    dtype = next(iter(params.values.values())).dtype
    x_tr = np.asarray(x_tr, dtype=dtype)
    x_va = np.asarray(x_va, dtype=dtype)
    y_tr = np.asarray(y_tr, dtype=dtype).reshape((len(y_tr),) + tuple(graph.output_shape))
    y_va = np.asarray(y_va, dtype=np.float64).reshape((len(y_va),) + tuple(graph.output_shape))
    result = TrainResult(params=params.copy())
    if not any(params.trainable.values()):
        return result

    static = static_nodes(graph, params)
    front = _frontier(graph, static)
    feeds_tr = _precompute(graph, params, x_tr, front, cfg.batch_size * 4)
    feeds_va = _precompute(graph, params, x_va, front, cfg.batch_size * 4)
    y_tr_int = to_internal(y_tr)

    rng = stream(cfg.seed, "shuffle")
    state = AdamState()
    best = np.inf
    wait = 0
    n = len(x_tr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            feeds = {k: v[idx] for k, v in feeds_tr.items()}
            cache: dict = {}
            out = forward_internal(graph, params, feeds, "train", cache)[graph.output]
            target = y_tr_int[idx]
            resid = out - target
            batch_losses.append(float(np.mean(resid.astype(np.float64) ** 2)))
            dy = (2.0 / resid.size) * resid
            grads = backward(graph, params, cache, dy.astype(dtype), internal=True)
            adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        val = _mse_eval(graph, params, feeds_va, y_va, cfg.batch_size * 4)
        result.train_loss.append(float(np.mean(batch_losses)))
        result.val_loss.append(val)
        result.epochs_run = epoch
        log.info("epoch %d train %.6f val %.6f", epoch, result.train_loss[-1], val)
        if val < best:
            best = val
            wait = 0
            result.best_epoch = epoch
            result.params = params.copy()
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    return result
