"""Training loop for energy-margin objectives with gradient regularization.

Five modes share one loop and differ only in which loss terms are active and
how the auxiliary batch is drawn:

  ce             cross-entropy only, no auxiliary data
  energy         + energy margin loss, auxiliary batch drawn uniformly
  energy_cluster + energy margin loss, cluster-based auxiliary selection
  greg           + gradient-norm penalty, auxiliary batches drawn uniformly
  greg_plus      + gradient-norm penalty, cluster-based auxiliary selection

The margin loss and the gradient penalty consume separate auxiliary batches:
the uniform modes split one 2b draw in half, the cluster modes use the
low-energy picks for the margin and the high-energy picks for the penalty.

Optimizer: SGD with classical momentum and coupled L2 weight decay (decay
added to the gradient before the velocity update), cosine learning rate.
"""

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Graph, GraphError, NonFiniteError, gradient
from .data import LabeledSet
from .losses import LossConfig, cross_entropy, energy_margin_loss, grad_reg_loss, total_loss
from .model import MlpModel, bind_params, forward
from .sampler import sample_batch
from .scores import score_node

MODES = ("ce", "energy", "energy_cluster", "greg", "greg_plus")


class NumericError(ArithmeticError):
    """Training produced a non-finite value; message carries the iteration."""


def mode_flags(mode: str):
    """(use_margin, use_penalty, use_sampler) for a mode name."""
    if mode not in MODES:
        raise GraphError(f"mode must be one of {MODES}, got {mode!r}")
    return (
        mode != "ce",
        mode in ("greg", "greg_plus"),
        mode in ("energy_cluster", "greg_plus"),
    )


@dataclass
class TrainConfig:
    mode: str = "greg"
    epochs: int = 50
    batch_size: int = 64
    lr_max: float = 0.01
    lr_min: float = 1e-4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    cluster_k: int = 0  # 0 means: match the ID batch size
    pool_multiple: int = 8  # cluster pool size = pool_multiple * k
    sampler_restarts: int = 1
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self):
        mode_flags(self.mode)
        if self.epochs < 1 or self.batch_size < 1:
            raise GraphError("epochs and batch_size must be positive")
        if not 0.0 < self.lr_min <= self.lr_max:
            raise GraphError("need 0 < lr_min <= lr_max")
        if not 0.0 <= self.momentum < 1.0:
            raise GraphError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise GraphError("weight_decay must be nonnegative")
        if self.cluster_k < 0 or self.pool_multiple < 1 or self.sampler_restarts < 1:
            raise GraphError("cluster_k >= 0, pool_multiple >= 1, sampler_restarts >= 1")
        self.loss.validate()
        return self


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Half-cosine schedule: lr_max at step 0, approaching lr_min at
    step == total_steps (steps normally run 0 .. total_steps - 1)."""
    if total_steps < 1:
        raise GraphError("total_steps must be positive")
    t = min(max(step, 0), total_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total_steps))


def sgd_step(params, grads, velocity, lr, momentum, weight_decay):
    """In-place momentum SGD with coupled L2 decay:
    v <- momentum v + (g + wd p); p <- p - lr v."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


TRAJECTORY_COLUMNS = ("iter", "ce", "l_s", "l_grad", "mean_grad_norm", "lr")


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)

    def append(self, it, ce, l_s, l_grad, mean_grad_norm, lr):
        self.rows.append((int(it), float(ce), float(l_s), float(l_grad),
                          float(mean_grad_norm), float(lr)))

    def column(self, name: str) -> np.ndarray:
        i = TRAJECTORY_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(TRAJECTORY_COLUMNS) + "\n")
            for r in self.rows:
                fh.write(",".join([str(r[0])] + [repr(v) for v in r[1:]]) + "\n")

    @classmethod
    def from_csv(cls, path):
        log = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(TRAJECTORY_COLUMNS):
                raise ValueError(f"{path}: unexpected trajectory header {header}")
            for row in reader:
                log.append(int(row[0]), *[float(v) for v in row[1:]])
        return log


def _draw_aux(rng, aux_x, need, what):
    if aux_x is None or aux_x.shape[0] < need:
        have = 0 if aux_x is None else aux_x.shape[0]
        raise GraphError(f"auxiliary pool too small for {what}: need {need}, have {have}")
    return rng.choice(aux_x.shape[0], size=need, replace=False)


def train(model: MlpModel, id_set: LabeledSet, aux_x, cfg: TrainConfig) -> TrajectoryLog:
    """Run the configured mode over id_set, mutating the model in place.

    aux_x is the (n, d) auxiliary pool; pass None only in ce mode. Each row
    of the returned log holds the loss terms at the pre-update parameters of
    that iteration; l_s and l_grad are zero in modes that skip them.
    """
    cfg.validate()
    use_margin, use_penalty, use_sampler = mode_flags(cfg.mode)
    if id_set.y is None:
        raise GraphError("training data must carry class labels")
    if use_margin:
        aux_x = np.asarray(aux_x, dtype=np.float64) if aux_x is not None else None

    eff = replace(cfg.loss,
                  lambda_s=cfg.loss.lambda_s if use_margin else 0.0,
                  lambda_grad=cfg.loss.lambda_grad if use_penalty else 0.0)
    n = len(id_set)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    velocity = [np.zeros_like(p) for p in model.parameters()]
    log = TrajectoryLog()
    it = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(steps_per_epoch):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb, yb = id_set.x[idx], id_set.y[idx]
            aux_margin = aux_grad = None
            if use_margin:
                k = cfg.cluster_k if cfg.cluster_k > 0 else idx.size
                if use_sampler:
                    pool_n = min(cfg.pool_multiple * k, aux_x.shape[0] if aux_x is not None else 0)
                    pool_idx = _draw_aux(rng, aux_x, max(pool_n, k), "cluster pool")
                    pool = aux_x[pool_idx]
                    sel = sample_batch(model, pool, k, seed=int(rng.integers(2**63)),
                                       restarts=cfg.sampler_restarts)
                    aux_margin = pool[sel.low]
                    if use_penalty:
                        aux_grad = pool[sel.high]
                elif use_penalty:
                    a = _draw_aux(rng, aux_x, 2 * k, "margin and penalty batches")
                    aux_margin, aux_grad = aux_x[a[:k]], aux_x[a[k:]]
                else:
                    aux_margin = aux_x[_draw_aux(rng, aux_x, k, "margin batch")]
            lr = cosine_lr(it, total_steps, cfg.lr_max, cfg.lr_min)
            try:
                values, grads, gn = _loss_step(model, xb, yb, aux_margin, aux_grad,
                                               eff, use_margin, use_penalty)
            except NonFiniteError as exc:
                raise NumericError(
                    f"non-finite value at iteration {it} (epoch {epoch}, lr {lr:.6g}): {exc}"
                ) from exc
            sgd_step(model.parameters(), grads, velocity, lr, cfg.momentum, cfg.weight_decay)
            log.append(it, values[0], values[1], values[2], gn, lr)
            it += 1
    return log


def _loss_step(model, xb, yb, aux_margin, aux_grad, cfg: LossConfig,
               use_margin: bool, use_penalty: bool):
    """One graph build: loss values, parameter gradient arrays, and the mean
    input-gradient norm over the ID batch plus the penalty's aux batch."""
    g = Graph()
    params = bind_params(model, g)
    x_id = g.variable(xb)
    logits = forward(model, g, x_id, params=params)
    ce = cross_entropy(g, logits, yb)
    s_id = score_node(g, logits, "energy")

    l_s = pen = None
    s_aux_m = None
    if use_margin and aux_margin is not None:
        s_aux_m = score_node(g, forward(model, g, aux_margin, params=params), "energy")
        l_s = energy_margin_loss(g, s_id, s_aux_m, cfg)
    if use_penalty:
        x_aux = None
        s_aux_g = None
        if aux_grad is not None:
            x_aux = g.variable(aux_grad)
            s_aux_g = score_node(g, forward(model, g, x_aux, params=params), "energy")
        pen = grad_reg_loss(g, x_id, s_id, x_aux, s_aux_g, cfg)

    loss = total_loss(g, ce, l_s, pen.loss if pen else None, cfg)
    grad_ids = gradient(g, loss, params)
    grads = [g.value(gid).reshape(p.shape).copy()
             for gid, p in zip(grad_ids, model.parameters())]

    if pen is not None:
        rows = [g.value(pen.grad_id)]
        if pen.grad_aux is not None:
            rows.append(g.value(pen.grad_aux))
    else:
        (gx,) = gradient(g, g.sum(s_id), [x_id])
        rows = [g.value(gx)]
    # this norm runs on detached arrays, outside the graph's finiteness
    # checks, so diverging runs must be caught here by hand
    with np.errstate(all="ignore"):
        gn = float(np.mean(np.linalg.norm(np.concatenate(rows), axis=1)))
    if not math.isfinite(gn):
        raise NonFiniteError("input-gradient norm overflowed")

    values = (
        g.value(ce).item(),
        g.value(l_s).item() if l_s is not None else 0.0,
        g.value(pen.loss).item() if pen is not None else 0.0,
    )
    return values, grads, gn
