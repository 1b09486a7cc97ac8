"""Training losses: cross-entropy, energy margins, gradient-norm penalty.

The margin loss pushes ID energies below m_in and auxiliary-outlier energies
above m_aux with squared hinges. The gradient penalty flattens the score
surface around samples the detector already places on the correct side of its
margin: indicator gates come from detached score values, the norm itself stays
live so its parameter gradient exists (double backprop through the recorded
input-gradient subgraph). With m_in < m_aux each sample can contribute to at
most one of the two terms on its side, never both.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, GraphError, gradient


@dataclass
class LossConfig:
    lambda_s: float = 0.1
    lambda_grad: float = 1.0
    m_in: float = -25.0
    m_aux: float = -7.0
    grad_norm_eps: float = 1e-12

    def validate(self):
        if not self.m_in < self.m_aux:
            raise GraphError(f"margins must satisfy m_in < m_aux, got {self.m_in} >= {self.m_aux}")
        if self.lambda_s < 0 or self.lambda_grad < 0 or self.grad_norm_eps < 0:
            raise GraphError("loss weights and grad_norm_eps must be nonnegative")
        return self


def cross_entropy(g: Graph, logits: int, labels) -> int:
    """Mean negative log-likelihood: mean_i [lse(z_i) - z_i[y_i]]."""
    z = g.value(logits)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != z.shape[0]:
        raise GraphError(f"labels shape {labels.shape} does not match logits {z.shape}")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise GraphError("label outside class range")
    hot = np.zeros_like(z)
    hot[np.arange(z.shape[0]), labels.astype(int)] = 1.0
    lse = g.logsumexp(logits, axis=1)
    picked = g.sum(g.mul(logits, g.constant(hot)), axis=1)
    return g.scale(g.sum(g.sub(lse, picked)), 1.0 / z.shape[0])


def _mean_sq_hinge(g: Graph, hinge: int) -> int:
    n = g.value(hinge).shape[0]
    return g.scale(g.sum(g.mul(hinge, hinge)), 1.0 / n)


def energy_margin_loss(g: Graph, id_scores, aux_scores, cfg: LossConfig) -> int:
    """mean relu(S_id - m_in)^2 + mean relu(m_aux - S_aux)^2.

    The squared hinge realizes the gated quadratic exactly: the indicator and
    the hinge vanish together at the margin. Either side may be None.
    """
    cfg.validate()
    terms = []
    if id_scores is not None:
        h = g.relu(g.sub(id_scores, g.constant(cfg.m_in)))
        terms.append(_mean_sq_hinge(g, h))
    if aux_scores is not None:
        h = g.relu(g.sub(g.constant(cfg.m_aux), aux_scores))
        terms.append(_mean_sq_hinge(g, h))
    if not terms:
        raise GraphError("energy_margin_loss needs at least one side")
    return terms[0] if len(terms) == 1 else g.add(terms[0], terms[1])


class GradPenalty:
    """Gradient-penalty term plus the live input-gradient nodes behind it."""

    def __init__(self, loss, grad_id, grad_aux):
        self.loss = loss
        self.grad_id = grad_id
        self.grad_aux = grad_aux


def _gated_norm_mean(g: Graph, gx: int, gate: np.ndarray, eps: float) -> int:
    sq = g.sum(g.mul(gx, gx), axis=1)
    norms = g.sqrt(g.add(sq, g.constant(eps)))
    n = gate.shape[0]
    return g.scale(g.sum(g.mul(g.constant(gate), norms)), 1.0 / n)


def grad_reg_loss(g: Graph, x_id, s_id, x_aux, s_aux, cfg: LossConfig) -> GradPenalty:
    """Gated mean input-gradient norm over ID and auxiliary batches.

    x_* are variable leaf node ids the scores were built from; s_* their score
    nodes (batch, 1). ID samples count when detached S <= m_in, auxiliary ones
    when detached S >= m_aux; gated-out samples contribute zero to the sum
    while the batch size stays in the denominator. The aux side is optional.
    """
    cfg.validate()
    wrt = [x_id] if x_aux is None else [x_id, x_aux]
    total = g.sum(s_id) if s_aux is None else g.add(g.sum(s_id), g.sum(s_aux))
    grads = gradient(g, total, wrt, create_graph=True)

    gate_id = (g.value(s_id) <= cfg.m_in).astype(np.float64)
    loss = _gated_norm_mean(g, grads[0], gate_id, cfg.grad_norm_eps)
    grad_aux = None
    if x_aux is not None:
        gate_aux = (g.value(s_aux) >= cfg.m_aux).astype(np.float64)
        loss = g.add(loss, _gated_norm_mean(g, grads[1], gate_aux, cfg.grad_norm_eps))
        grad_aux = grads[1]
    return GradPenalty(loss, grads[0], grad_aux)


def total_loss(g: Graph, ce: int, l_s, l_grad, cfg: LossConfig) -> int:
    """L = L_CE + lambda_s * L_S + lambda_grad * L_gradS; missing terms drop."""
    out = ce
    if l_s is not None and cfg.lambda_s != 0.0:
        out = g.add(out, g.scale(l_s, cfg.lambda_s))
    if l_grad is not None and cfg.lambda_grad != 0.0:
        out = g.add(out, g.scale(l_grad, cfg.lambda_grad))
    return out
