"""Detection scores over logits.

Score convention is uniform across kinds: lower score means more in
distribution, and a sample is labeled ID exactly when S(x) <= gamma. The
energy score is the negative log-sum-exp of the logits; the max-softmax score
is negated to keep the same orientation.
"""

import numpy as np

from .autodiff import Graph, GraphError, gradient
from .model import MlpModel, forward

SCORE_KINDS = ("energy", "msp")


def energy_score(logits: np.ndarray) -> np.ndarray:
    """S_En = -log sum_k exp(logit_k), per row, in shifted stable form."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    m = np.max(z, axis=1, keepdims=True)
    return -(np.log(np.sum(np.exp(z - m), axis=1)) + m.ravel())


def msp_score(logits: np.ndarray) -> np.ndarray:
    """Negative maximum softmax probability: -max_k p_k, stable form."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    m = np.max(z, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z - m), axis=1)) + m.ravel()
    return -np.exp(np.max(z, axis=1) - lse)


def score_array(logits: np.ndarray, kind: str) -> np.ndarray:
    if kind == "energy":
        return energy_score(logits)
    if kind == "msp":
        return msp_score(logits)
    raise GraphError(f"unknown score kind {kind!r}")


def score_node(g: Graph, logits: int, kind: str = "energy") -> int:
    """Per-row score as a (batch, 1) graph node over a logit node."""
    if kind == "energy":
        return g.neg(g.logsumexp(logits, axis=1))
    if kind == "msp":
        # -exp(max z - lse z); max-mask backward matches the softmax argmax
        return g.neg(g.exp(g.sub(g.max(logits, axis=1), g.logsumexp(logits, axis=1))))
    raise GraphError(f"unknown score kind {kind!r}")


class ScoreGraph:
    """A recorded score pipeline kept live for further differentiation."""

    def __init__(self, graph, x, logits, score, grad):
        self.graph = graph
        self.x = x
        self.logits = logits
        self.score = score
        self.grad = grad


def score_input_gradient(model: MlpModel, x: np.ndarray, kind: str = "energy", create_graph: bool = False):
    """d score / d input, row per sample.

    Rows of a batch are independent, so the gradient of the summed scores is
    the stack of per-sample input gradients. Returns a plain (batch, dim)
    array when create_graph is false, else a ScoreGraph whose .grad node can
    be differentiated again.
    """
    g = Graph()
    xid = g.variable(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    logits = forward(model, g, xid)
    s = score_node(g, logits, kind)
    (gx,) = gradient(g, g.sum(s), [xid], create_graph=create_graph)
    if not create_graph:
        return g.value(gx).copy()
    return ScoreGraph(g, xid, logits, s, gx)


def model_scores(model: MlpModel, x: np.ndarray, kind: str = "energy") -> np.ndarray:
    """Detached per-sample scores for a batch of inputs."""
    g = Graph()
    s = score_node(g, forward(model, g, np.atleast_2d(x)), kind)
    return g.value(s).ravel().copy()


def input_grad_norms(model: MlpModel, x: np.ndarray, kind: str = "energy") -> np.ndarray:
    """Per-sample L2 norm of the score input gradient."""
    return np.linalg.norm(score_input_gradient(model, x, kind), axis=1)


def mean_input_grad_norm(model: MlpModel, x: np.ndarray, kind: str = "energy") -> float:
    return float(np.mean(input_grad_norms(model, x, kind)))
