"""Small MLP classifiers on the autodiff graph.

The model is a plain parameter record; every forward pass is recorded on a
caller-supplied graph so input and parameter gradients are always available.
Checkpoints use a fixed little-endian binary layout that round-trips bit
exactly. For ReLU family activations the network is piecewise linear, and
probe_linear_region/local_affine_map expose the fixed-activation region around
a point together with its exact affine map, which is what the certification
module's Lipschitz arguments stand on.
"""

import struct

import numpy as np

from .autodiff import Graph, GraphError, as_tensor

CKPT_MAGIC = b"GREGCKPT"
CKPT_VERSION = 1

ACTIVATIONS = ("relu", "leaky_relu")


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class MlpModel:
    """Fully connected net: hidden layers with one activation kind, linear head.

    weights[i] has shape (fan_out, fan_in); biases[i] has shape (fan_out,).
    The last weight/bias pair is the head (class_count rows, no activation).
    """

    def __init__(self, weights, biases, activation="relu", leaky_slope=0.01):
        if activation not in ACTIVATIONS:
            raise GraphError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if len(weights) != len(biases) or not weights:
            raise GraphError("weights and biases must pair up")
        self.weights = [as_tensor(w) for w in weights]
        self.biases = [as_tensor(b) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise GraphError(f"layer shapes disagree: {w.shape} vs {b.shape}")
        self.activation = activation
        self.leaky_slope = float(leaky_slope)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def class_count(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_dims(self) -> list:
        return [w.shape[0] for w in self.weights[:-1]]

    def parameters(self) -> list:
        """Declaration order: W1, b1, ..., Wh, bh, W_head, b_head."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_parameters(self, tensors):
        expect = self.parameters()
        if len(tensors) != len(expect):
            raise GraphError(f"expected {len(expect)} tensors, got {len(tensors)}")
        for i, t in enumerate(tensors):
            t = as_tensor(t)
            if t.shape != expect[i].shape:
                raise GraphError(f"tensor {i} shape {t.shape} != {expect[i].shape}")
        self.weights = [as_tensor(tensors[2 * i]) for i in range(len(self.weights))]
        self.biases = [as_tensor(tensors[2 * i + 1]) for i in range(len(self.biases))]


def init_mlp(input_dim, hidden_dims, class_count, seed, activation="relu", leaky_slope=0.01) -> MlpModel:
    """Scaled-uniform fan-in init: W ~ U(+-sqrt(6/fan_in)), biases zero.

    Draw order is fixed (layers first to last, weights row-major), so one seed
    pins every parameter bit.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    dims = [int(input_dim)] + [int(h) for h in hidden_dims] + [int(class_count)]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, activation=activation, leaky_slope=leaky_slope)


def bind_params(model: MlpModel, g: Graph) -> list:
    """Record every parameter as a gradient-taking leaf; returns node ids in
    declaration order. Biases are laid out as (1, n) rows on the graph."""
    ids = []
    for i, p in enumerate(model.parameters()):
        ids.append(g.variable(p if i % 2 == 0 else p[None, :]))
    return ids


def _as_input_node(g: Graph, x) -> int:
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = as_tensor(x)
    if x.ndim != 2:
        raise GraphError(f"model input must be (batch, dim), got shape {x.shape}")
    return g.constant(x)


def features(model: MlpModel, g: Graph, x, params=None, preacts=None) -> int:
    """Hidden representation h(x) as a graph node.

    x may be a (batch, dim) array or an existing node id (pass a variable node
    to take input gradients). params are the node ids from bind_params; fresh
    constants are recorded when omitted. preacts, if a list, collects the
    pre-activation node ids layer by layer.
    """
    xid = _as_input_node(g, x)
    if params is None:
        params = bind_params(model, g)
    h = xid
    n_hidden = len(model.weights) - 1
    for i in range(n_hidden):
        pre = g.add(g.matmul(h, params[2 * i], transpose_b=True), params[2 * i + 1])
        if preacts is not None:
            preacts.append(pre)
        h = g.relu(pre) if model.activation == "relu" else g.leaky_relu(pre, model.leaky_slope)
    return h


def forward(model: MlpModel, g: Graph, x, params=None, preacts=None) -> int:
    """Logit node: linear head over features."""
    if params is None:
        params = bind_params(model, g)
    h = features(model, g, x, params=params, preacts=preacts)
    return g.add(g.matmul(h, params[-2], transpose_b=True), params[-1])


def logits_array(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Forward pass values only, (batch, class_count)."""
    g = Graph()
    return g.value(forward(model, g, x)).copy()


def feature_array(model: MlpModel, x: np.ndarray) -> np.ndarray:
    g = Graph()
    return g.value(features(model, g, x)).copy()


# -- checkpoint io -----------------------------------------------------------
# layout: magic "GREGCKPT" | u32 version | u32 tensor count |
#         per tensor: u32 rank | u32 extent per axis | float64 data
# all integers and floats little-endian


def save_checkpoint(path, tensors):
    tensors = [as_tensor(t) for t in tensors]
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(tensors)))
        for t in tensors:
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}I", *t.shape))
            f.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> list:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    off = len(CKPT_MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(raw):
            raise CheckpointError(f"truncated checkpoint: needed {off + n} bytes, file has {len(raw)}")
        blob = raw[off : off + n]
        off += n
        return blob

    version, count = struct.unpack("<II", take(8))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = []
    for _ in range(count):
        (rank,) = struct.unpack("<I", take(4))
        if rank > 2:
            raise CheckpointError(f"tensor rank {rank} not supported")
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64)
        tensors.append(data.reshape(shape))
    if off != len(raw):
        raise CheckpointError(f"{len(raw) - off} trailing bytes after last tensor")
    return tensors


def save_model(path, model: MlpModel):
    save_checkpoint(path, model.parameters())


def load_model(path, activation="relu", leaky_slope=0.01) -> MlpModel:
    """Rebuild a model from checkpoint tensors; the activation kind is not
    part of the binary layout and comes from the run config."""
    tensors = load_checkpoint(path)
    if len(tensors) < 2 or len(tensors) % 2 != 0:
        raise CheckpointError(f"checkpoint holds {len(tensors)} tensors, expected weight/bias pairs")
    weights = tensors[0::2]
    biases = tensors[1::2]
    return MlpModel(weights, biases, activation=activation, leaky_slope=leaky_slope)


# -- piecewise-linear region probing ----------------------------------------


def preactivation_values(model: MlpModel, x: np.ndarray) -> list:
    g = Graph()
    pres = []
    forward(model, g, np.atleast_2d(x), preacts=pres)
    return [g.value(p).copy() for p in pres]


def activation_pattern(model: MlpModel, x: np.ndarray) -> tuple:
    """Sign pattern of every hidden pre-activation (>= 0 counts as on)."""
    return tuple((p >= 0.0).tobytes() for p in preactivation_values(model, x))


def on_activation_boundary(model: MlpModel, x: np.ndarray, tol=1e-12) -> bool:
    return any(np.min(np.abs(p)) <= tol for p in preactivation_values(model, x))


def probe_linear_region(model: MlpModel, x: np.ndarray, seed=0, n_probes=32, r_max=1.0, iters=30) -> float:
    """Radius (found by bisection) within which sampled points keep x's
    activation pattern. Returns 0.0 only if even the smallest radius fails,
    which cannot happen off the activation boundaries."""
    x = np.asarray(x, dtype=np.float64).ravel()
    rng = np.random.Generator(np.random.PCG64(seed))
    dirs = rng.normal(size=(n_probes, x.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    ref = [np.repeat(p >= 0.0, n_probes, axis=0) for p in preactivation_values(model, x[None, :])]

    def pattern_holds(r):
        pres = preactivation_values(model, x[None, :] + r * dirs)
        return all(np.array_equal(p >= 0.0, m) for p, m in zip(pres, ref))

    lo, hi = 0.0, float(r_max)
    if pattern_holds(hi):
        return hi
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if pattern_holds(mid):
            lo = mid
        else:
            hi = mid
    return lo


def local_affine_map(model: MlpModel, x: np.ndarray):
    """Exact affine map f(x') = A x' + c on x's fixed-activation region.

    A chains the layer matrices through the frozen activation masks; c is
    recovered as f(x) - A x, exact up to float rounding.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    pres = preactivation_values(model, x[None, :])
    a_mat = np.eye(x.size)
    for i, pre in enumerate(pres):
        off = 0.0 if model.activation == "relu" else model.leaky_slope
        mask = np.where(pre.ravel() >= 0.0, 1.0, off)
        a_mat = mask[:, None] * (model.weights[i] @ a_mat)
    a_mat = model.weights[-1] @ a_mat
    f_x = logits_array(model, x[None, :]).ravel()
    c = f_x - a_mat @ x
    return a_mat, c
