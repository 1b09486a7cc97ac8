"""Shared oracle machinery for the test suite.

Finite differences are the independent route for checking recorded gradients,
so everything here deliberately avoids the library's backward pass: cases are
replayable recipes that rebuild a fresh graph per evaluation and only read
forward values.
"""

import math

import numpy as np

from greg_ood.autodiff import Graph

FD_STEP = 1e-5
# kink ops (relu / leaky_relu / max) and domain ops (log / sqrt / recip) make
# central differences invalid near their breakpoints; candidate graphs keep a
# margin away from them and each FD probe re-checks that no mask flipped
KINK_MARGIN = 1e-3
DOMAIN_MARGIN = 0.1
VALUE_CAP = 50.0


def rel_err_report(ad, fd, floor=1e-2, abs_tol=1e-8):
    """Worst relative error between gradient arrays, with a noise floor.

    Entries with |fd| >= floor are compared relatively; smaller entries sit at
    the finite-difference noise level (~1e-9 here), where a relative test is
    meaningless, so they must agree within abs_tol instead. Returns
    (max_relative_error, floor_violation_count).
    """
    ad = np.asarray(ad, dtype=np.float64).ravel()
    fd = np.asarray(fd, dtype=np.float64).ravel()
    big = np.abs(fd) >= floor
    max_rel = 0.0
    if big.any():
        max_rel = float(np.max(np.abs(ad[big] - fd[big]) / np.abs(fd[big])))
    small_bad = int(np.sum(np.abs(ad[~big] - fd[~big]) > abs_tol))
    return max_rel, small_bad


def pattern_signature(graph: Graph):
    """Activation-pattern fingerprint of every kink op in a graph."""
    sig = []
    for node in graph.nodes:
        if node.op in ("relu", "leaky_relu"):
            sig.append((graph.value(node.parents[0]) >= 0.0).tobytes())
        elif node.op == "max":
            a = graph.value(node.parents[0])
            axis = node.attrs["axis"]
            if axis is None:
                sig.append(int(np.argmax(a)))
            else:
                sig.append(np.argmax(a, axis=axis).tobytes())
    return tuple(sig)


_ELEMENTWISE = ["relu", "leaky_relu", "exp", "log", "sqrt", "recip", "neg", "scale"]
_REDUCTIONS = ["sum", "max", "logsumexp"]


class GraphCase:
    """A replayable random op graph with a scalar output.

    Built once from a seed; replay(values) re-records the identical recipe on
    a fresh graph with substituted leaf values, which is what lets central
    differences probe it without touching the backward machinery.
    """

    def __init__(self, seed: int, n_ops: int = 8):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.leaf_values: list[np.ndarray] = []
        self.recipe: list[tuple] = []  # (op, parent slots, attrs)
        self._build(n_ops)

    def _rand_shape(self):
        r = self.rng.integers(0, 3)
        if r == 0:
            return ()
        if r == 1:
            return (int(self.rng.integers(2, 5)),)
        return (int(self.rng.integers(2, 5)), int(self.rng.integers(2, 5)))

    def _build(self, n_ops):
        n_leaves = int(self.rng.integers(1, 4))
        for _ in range(n_leaves):
            self.leaf_values.append(self.rng.uniform(-3.0, 3.0, size=self._rand_shape()))
        g, slots = self._replay_raw(self.leaf_values)
        made = 0
        attempts = 0
        while made < n_ops and attempts < 200:
            attempts += 1
            step = self._propose(g, slots)
            if step is None:
                continue
            op, parents, attrs = step
            try:
                nid = g.record(op, tuple(slots[p] for p in parents), **attrs)
            except Exception:
                continue
            if not self._acceptable(g, nid):
                g.nodes.pop()
                continue
            slots.append(nid)
            self.recipe.append((op, tuple(parents), attrs))
            made += 1
        # collapse to a scalar output
        while g.value(slots[-1]).shape != ():
            self.recipe.append(("sum", (len(slots) - 1,), {"axis": None}))
            slots.append(g.sum(slots[-1]))

    def _propose(self, g, slots):
        kind = self.rng.integers(0, 5)
        if kind == 0:  # binary broadcastish
            op = str(self.rng.choice(["add", "mul"]))
            a = int(self.rng.integers(0, len(slots)))
            mates = [i for i in range(len(slots)) if _bcast_ok(g.value(slots[a]).shape, g.value(slots[i]).shape)]
            if not mates:
                return None
            b = int(self.rng.choice(mates))
            return op, (a, b), {}
        if kind == 1:  # elementwise unary
            op = str(self.rng.choice(_ELEMENTWISE))
            a = int(self.rng.integers(0, len(slots)))
            v = g.value(slots[a])
            if op in ("log", "sqrt") and np.min(v) < DOMAIN_MARGIN:
                return None
            if op == "recip" and np.min(np.abs(v)) < DOMAIN_MARGIN:
                return None
            if op in ("relu", "leaky_relu") and np.min(np.abs(v)) < KINK_MARGIN:
                return None
            attrs = {}
            if op == "scale":
                attrs = {"c": float(self.rng.uniform(0.2, 2.0)) * float(self.rng.choice([-1.0, 1.0]))}
            if op == "leaky_relu":
                attrs = {"slope": 0.01}
            return op, (a,), attrs
        if kind == 2:  # reduction
            op = str(self.rng.choice(_REDUCTIONS))
            a = int(self.rng.integers(0, len(slots)))
            v = g.value(slots[a])
            choices = [None] if v.ndim < 2 else [None, 0, 1]
            axis = choices[int(self.rng.integers(0, len(choices)))]
            if v.size == 0 or (op == "max" and not _max_gap_ok(v, axis)):
                return None
            return op, (a,), {"axis": axis}
        if kind == 3:  # matmul
            pairs = []
            for i in range(len(slots)):
                for j in range(len(slots)):
                    for ta in (False, True):
                        for tb in (False, True):
                            sa, sb = g.value(slots[i]).shape, g.value(slots[j]).shape
                            if len(sa) == 2 and len(sb) == 2:
                                ka = sa[0] if ta else sa[1]
                                kb = sb[1] if tb else sb[0]
                                if ka == kb:
                                    pairs.append((i, j, ta, tb))
            if not pairs:
                return None
            i, j, ta, tb = pairs[int(self.rng.integers(0, len(pairs)))]
            return "matmul", (i, j), {"ta": ta, "tb": tb}
        # dot
        ones = [i for i in range(len(slots)) if g.value(slots[i]).ndim == 1]
        pairs = [(i, j) for i in ones for j in ones if g.value(slots[i]).shape == g.value(slots[j]).shape]
        if not pairs:
            return None
        i, j = pairs[int(self.rng.integers(0, len(pairs)))]
        return "dot", (i, j), {}

    def _acceptable(self, g, nid):
        v = g.value(nid)
        return np.all(np.isfinite(v)) and float(np.max(np.abs(v))) <= VALUE_CAP if v.size else False

    def _replay_raw(self, leaf_values):
        g = Graph()
        slots = [g.variable(v) for v in leaf_values]
        for op, parents, attrs in self.recipe:
            slots.append(g.record(op, tuple(slots[p] for p in parents), **attrs))
        return g, slots

    def evaluate(self, leaf_values):
        """Forward value and kink signature at the given leaves."""
        g, slots = self._replay_raw(leaf_values)
        return float(g.value(slots[-1])), pattern_signature(g)

    def build(self):
        """Fresh graph at the base point: (graph, output id, leaf ids)."""
        g, slots = self._replay_raw(self.leaf_values)
        return g, slots[-1], slots[: len(self.leaf_values)]


def _max_gap_ok(v, axis):
    """Top-two gap along the reduction axis, so FD never straddles an argmax tie."""
    if v.size < 2:
        return True
    if axis is None:
        s = np.sort(v.ravel())
        return s[-1] - s[-2] >= KINK_MARGIN
    s = np.sort(v, axis=axis)
    if axis == 0:
        return bool(np.all(s[-1, :] - s[-2, :] >= KINK_MARGIN)) if v.shape[0] >= 2 else True
    return bool(np.all(s[:, -1] - s[:, -2] >= KINK_MARGIN)) if v.shape[1] >= 2 else True


def _bcast_ok(sa, sb):
    if sa == sb or sa == () or sb == ():
        return True
    if len(sa) == 2 and len(sb) == 2:
        return (sa[1] == sb[1] and 1 in (sa[0], sb[0])) or (sa[0] == sb[0] and 1 in (sa[1], sb[1]))
    return False


def fd_case_gradients(case: GraphCase, h: float = FD_STEP):
    """Central-difference leaf gradients for a GraphCase.

    Probes where a kink mask flips between the two evaluations are invalid for
    FD and come back as NaN; callers exclude them from the comparison.
    """
    base_vals = [v.copy() for v in case.leaf_values]
    _, base_sig = case.evaluate(base_vals)
    grads = []
    for li, leaf in enumerate(base_vals):
        gflat = np.zeros(leaf.size)
        for k in range(leaf.size):
            plus = [v.copy() for v in base_vals]
            minus = [v.copy() for v in base_vals]
            plus[li].flat[k] += h
            minus[li].flat[k] -= h
            fp, sp = case.evaluate(plus)
            fm, sm = case.evaluate(minus)
            if sp != base_sig or sm != base_sig:
                gflat[k] = np.nan
            else:
                gflat[k] = (fp - fm) / (2.0 * h)
        grads.append(gflat.reshape(leaf.shape))
    return grads


def fd_scalar(fn, x: np.ndarray, h: float = FD_STEP):
    """Central-difference gradient of a scalar fn over every entry of x."""
    out = np.zeros(x.size)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[k] += h
        xm.flat[k] -= h
        out[k] = (fn(xp) - fn(xm)) / (2.0 * h)
    return out.reshape(x.shape)


def softmax_np(z):
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def logsumexp_np(z, axis=None):
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out) if axis is None else out


def run_case(seed, n_ops=8, floor=1e-2, rtol=1e-6):
    """Build one random graph, compare recorded gradients to FD.

    Returns (max relative error seen, probes compared, probes skipped).
    """
    from greg_ood.autodiff import gradient

    case = GraphCase(seed, n_ops=n_ops)
    g, out, leaves = case.build()
    grad_ids = gradient(g, out, leaves)
    fd = fd_case_gradients(case)
    worst = 0.0
    used = skipped = 0
    for gid, fdg in zip(grad_ids, fd):
        ad = g.value(gid)
        valid = np.isfinite(fdg)
        skipped += int(np.sum(~valid))
        if not valid.any():
            continue
        rel, small_bad = rel_err_report(ad[valid], fdg[valid], floor=floor)
        assert small_bad == 0, f"seed {seed}: small-gradient mismatch beyond FD noise"
        worst = max(worst, rel)
        used += int(np.sum(valid))
    return worst, used, skipped
