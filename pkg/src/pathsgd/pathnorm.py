"""Path-regularizer and the per-parameter curvature terms that precondition
path-normalized updates.

The path-regularizer gamma^2 of a net is the sum, over all directed paths
from input (or bias) nodes to output nodes, of the product of squared edge
weights along the path.  The preconditioner kappa_i is half the second
derivative of gamma^2 with respect to parameter p_i.  It splits as
kappa = kappa1 + kappa2:

* kappa1_i sums, over every edge e carrying parameter i and every path
  through e, the squared-weight product of the path excluding e;
* kappa2_i collects the interaction of two distinct edges carrying the same
  parameter on one path, and is therefore exactly zero when no path reuses
  a parameter (any net with a one-to-one parameter map).

The authoritative ground truth here is the finite-difference kappa_fd built
on the gamma recursion; every closed form below is validated against it.
kappa1 is computed with one forward/backward pass of the same architecture
with squared parameters evaluated at the all-ones input, whose summed output
equals gamma^2 node-for-node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compute
from .graph import RnnLayout, SharedWeightNet

# Enumeration oracles refuse beyond this many paths; path counts grow
# exponentially in depth, so brute force is for desk-scale verification only.
PATH_GUARD = 10**6

# A path on which parameter i occurs k times contributes k(2k-1) * (product
# of the other squared weights) to half the second derivative.  The
# per-occurrence sum (kappa1) accounts for k of that; ordered pairs of
# distinct occurrences number k(k-1), so the pair sum enters with
# coefficient 2.  In the chronological matrix form only the time-ordered
# half of each pair survives (the reverse direction has no connecting path),
# hence coefficient 4 there.  Both constants are pinned by tests against
# the finite-difference oracle.
ORDERED_PAIR_COEFF = 2.0
CHRONO_PAIR_COEFF = 4.0

KAPPA_MODES = ("k1", "k1_plus_k2")


class EnumerationError(RuntimeError):
    """Path enumeration would exceed PATH_GUARD."""


@dataclass(frozen=True)
class SquaredNet:
    """The same architecture with every parameter squared.

    With nonnegative parameters and the all-ones input every node value is
    nonnegative, so the ReLU acts as the identity and each node value equals
    the node's gamma^2.  The forward keeps the ReLU in place; backward passes
    use the identity derivative because on the nonnegative orthant the
    function is the gamma^2 polynomial.
    """

    net: SharedWeightNet
    params: np.ndarray  # squared parameter vector

    @classmethod
    def from_params(cls, net: SharedWeightNet, p: np.ndarray) -> "SquaredNet":
        p = np.asarray(p, dtype=float)
        return cls(net=net, params=p * p)

    def forward_ones(self):
        x = np.ones(len(self.net.input_ids))
        return compute.forward(self.net, self.params, x, activation="relu")

    def output_sum(self) -> float:
        outputs, _ = self.forward_ones()
        total = 0.0
        for v in outputs:
            total += float(v)
        return total


@dataclass(frozen=True)
class KappaVector:
    """The kappa1 / kappa2 decomposition for one parameter point."""

    k1: np.ndarray
    k2: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.k1 + self.k2


def gamma_recursive(net: SharedWeightNet, p: np.ndarray) -> float:
    """gamma^2 of the net by the node recursion.

    gamma^2 is 1 at input and bias nodes and accumulates incoming
    gamma^2_u * w^2 at every other node; the net value sums the outputs.
    Accumulation order matches the forward interpreter so that the squared
    net evaluated at the all-ones input reproduces these values bit-exactly.
    """
    p = np.asarray(p, dtype=float)
    g = np.zeros(net.num_nodes)
    for node in net.nodes:
        if node.kind in ("input", "bias"):
            g[node.idx] = 1.0
            continue
        z = 0.0
        for u, pi in net.incoming[node.idx]:
            z += p[pi] * p[pi] * g[u]
        g[node.idx] = z
    total = 0.0
    for v in net.output_ids:
        total += float(g[v])
    return total


def count_paths(net: SharedWeightNet) -> int:
    """Number of directed paths from input/bias nodes to output nodes."""
    counts = np.zeros(net.num_nodes, dtype=np.int64)
    for node in reversed(net.nodes):
        if node.kind == "output":
            counts[node.idx] = 1
        else:
            counts[node.idx] = sum(counts[v] for v, _ in net.outgoing[node.idx])
    sources = list(net.input_ids)
    if net.bias_id is not None:
        sources.append(net.bias_id)
    return int(sum(counts[v] for v in sources))


def iter_paths(net: SharedWeightNet):
    """Yield every input/bias -> output path as a list of parameter indices,
    one per edge in path order.  Raises EnumerationError over PATH_GUARD."""
    n = count_paths(net)
    if n > PATH_GUARD:
        raise EnumerationError(f"{n} paths exceed the enumeration guard of {PATH_GUARD}")
    sources = list(net.input_ids)
    if net.bias_id is not None:
        sources.append(net.bias_id)
    kinds = [nd.kind for nd in net.nodes]

    def walk(v: int, acc: list[int]):
        if kinds[v] == "output":
            yield list(acc)
            return
        for u, pi in net.outgoing[v]:
            acc.append(pi)
            yield from walk(u, acc)
            acc.pop()

    for s in sources:
        yield from walk(s, [])


def gamma_bruteforce(net: SharedWeightNet, p: np.ndarray) -> float:
    """gamma^2 by explicit path enumeration; the oracle for the recursion."""
    p = np.asarray(p, dtype=float)
    total = 0.0
    for path in iter_paths(net):
        prod = 1.0
        for pi in path:
            prod *= p[pi] * p[pi]
        total += prod
    return total


def kappa_fd(net: SharedWeightNet, p: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Half the second derivative of gamma^2 per parameter, by central second
    differences of the recursion.  The authoritative kappa oracle.

    The step is relative: h_i = step * max(|p_i|, 1); gamma^2 is a
    polynomial, so second differences at this scale are well conditioned in
    64-bit.
    """
    p = np.asarray(p, dtype=float)
    out = np.zeros_like(p)
    g0 = gamma_recursive(net, p)
    for i in range(p.shape[0]):
        h = step * max(abs(p[i]), 1.0)
        pp = p.copy()
        pp[i] = p[i] + h
        gp = gamma_recursive(net, pp)
        pp[i] = p[i] - h
        gm = gamma_recursive(net, pp)
        out[i] = 0.5 * (gp - 2.0 * g0 + gm) / (h * h)
    return out


# --- kappa1 ------------------------------------------------------------------

def kappa1(net: SharedWeightNet, p: np.ndarray) -> np.ndarray:
    """kappa1 via the squared net: gradient of its summed output at the
    all-ones input, taken with respect to the squared parameters.

    One extra forward/backward pass; dispatches to the vectorized layout
    route for unrolled RNNs.
    """
    if net.rnn is not None:
        return kappa1_layout(net.rnn, p)
    sq = SquaredNet.from_params(net, p)
    _, trace = sq.forward_ones()
    d_out = np.ones(len(net.output_ids))
    return compute.backprop(net, sq.params, trace, d_out, activation="identity")


def _squared_states(layout: RnnLayout, p: np.ndarray):
    """Forward and backward state of the squared net at the all-ones input.

    Returns (h, delta) where h[i] has shape (T, H_i) with h[0] the ones
    input block, and delta[i][t] = d(sum of outputs)/d h^i_t.  ReLU is inert
    here (all values nonnegative), so the backward uses unit derivatives.
    """
    spec = layout.spec
    p = np.asarray(p, dtype=float)
    pt = p * p
    T, d = spec.length, spec.depth

    h: list = [np.ones((T, spec.input_dim))]
    for i in range(1, d):
        Win = layout.view(pt, f"in{i}")
        Wrec = layout.matrix(pt, f"rec{i}")
        b = layout.matrix(pt, f"b{i}")
        Hi = Win.shape[0]
        h_i = np.empty((T, Hi))
        for t in range(T):
            z = Win @ h[i - 1][t]
            if Wrec is not None and t > 0:
                z = z + Wrec @ h_i[t - 1]
            if b is not None:
                z = z + b[:, 0]
            h_i[t] = z
        h.append(h_i)

    Wout = layout.view(pt, "out")
    ones_out = np.ones(spec.output_dim)
    delta: list = [None] * d
    for i in range(d - 1, 0, -1):
        Wrec = layout.matrix(pt, f"rec{i}")
        Hi = h[i].shape[1]
        d_i = np.empty((T, Hi))
        for t in range(T - 1, -1, -1):
            if i == d - 1:
                dd = Wout.T @ ones_out
            else:
                Win_up = layout.view(pt, f"in{i + 1}")
                dd = Win_up.T @ delta[i + 1][t]
            if Wrec is not None and t < T - 1:
                dd = dd + Wrec.T @ d_i[t + 1]
            d_i[t] = dd
        delta[i] = d_i
    return h, delta


def kappa1_layout(layout: RnnLayout, p: np.ndarray) -> np.ndarray:
    """Vectorized kappa1 for unrolled RNNs; cost of one pass over the net."""
    spec = layout.spec
    h, delta = _squared_states(layout, p)
    out = np.zeros(layout.m)
    for i in range(1, spec.depth):
        sl, _ = layout.slices[f"in{i}"]
        out[sl] = (delta[i].T @ h[i - 1]).reshape(-1)
        if f"rec{i}" in layout.slices:
            sl, _ = layout.slices[f"rec{i}"]
            out[sl] = (delta[i][1:].T @ h[i][:-1]).reshape(-1)
        if f"b{i}" in layout.slices:
            sl, _ = layout.slices[f"b{i}"]
            out[sl] = delta[i].sum(axis=0)
    sl, _ = layout.slices["out"]
    out[sl] = np.tile(h[spec.depth - 1].sum(axis=0), (spec.output_dim, 1)).reshape(-1)
    if "bout" in layout.slices:
        sl, _ = layout.slices["bout"]
        out[sl] = float(spec.length)
    return out


def kappa1_bruteforce(net: SharedWeightNet, p: np.ndarray) -> np.ndarray:
    """kappa1 by per-edge path enumeration: for every path and every edge on
    it, the squared-weight product of the other edges.  Oracle for kappa1."""
    p = np.asarray(p, dtype=float)
    sq = p * p
    out = np.zeros(net.num_params)
    for path in iter_paths(net):
        w2 = [sq[pi] for pi in path]
        for j, pi in enumerate(path):
            prod = 1.0
            for k, w in enumerate(w2):
                if k != j:
                    prod *= w
            out[pi] += prod
    return out


# --- kappa2 ------------------------------------------------------------------

def kappa2_bruteforce(net: SharedWeightNet, p: np.ndarray) -> np.ndarray:
    """kappa2 by enumerating ordered pairs of distinct same-parameter edges
    on each path: p_i^2 times the squared-weight product excluding the pair,
    scaled by ORDERED_PAIR_COEFF.  Oracle for the matrix form."""
    p = np.asarray(p, dtype=float)
    sq = p * p
    out = np.zeros(net.num_params)
    for path in iter_paths(net):
        occ: dict[int, list[int]] = {}
        for j, pi in enumerate(path):
            occ.setdefault(pi, []).append(j)
        w2 = [sq[pi] for pi in path]
        for pi, positions in occ.items():
            if len(positions) < 2:
                continue
            for j1 in positions:
                for j2 in positions:
                    if j1 == j2:
                        continue
                    prod = 1.0
                    for k, w in enumerate(w2):
                        if k != j1 and k != j2:
                            prod *= w
                    out[pi] += sq[pi] * prod
    return ORDERED_PAIR_COEFF * out


def kappa2_layout(layout: RnnLayout, p: np.ndarray) -> np.ndarray:
    """kappa2 for unrolled RNNs in closed matrix form.

    Only recurrent parameters can repeat along an input-output path (inputs,
    biases and outputs touch a path at most once), so all other entries are
    zero.  For recurrent entry [j, k] of layer i, two applications at steps
    s < s' connect through (A^(s'-1-s))[k, j] where A is the squared
    recurrent matrix; summing the time-ordered pairs gives, with
    h / delta the squared-net states,

        kappa2[j, k] = C * A[j, k] * sum_g (A^g)[k, j] *
                       sum_s delta_(s+g+1)[j] * h_(s-1)[k]

    with g from 0 to T-3, s from 1 to T-2-g (0-based steps) and
    C = CHRONO_PAIR_COEFF.  Cost per layer: O(T H^3 + T^2 H^2).
    """
    spec = layout.spec
    p = np.asarray(p, dtype=float)
    T = spec.length
    out = np.zeros(layout.m)
    if T < 3 or not layout.has_recurrent:
        return out
    pt = p * p
    h, delta = _squared_states(layout, p)
    for i in range(1, spec.depth):
        A = layout.view(pt, f"rec{i}")
        acc = np.zeros_like(A)
        Ag = np.eye(A.shape[0])  # A^g
        for g in range(0, T - 2):
            n = T - 2 - g  # number of valid s values
            M = delta[i][g + 2:].T @ h[i][:n]
            acc += Ag.T * M
            Ag = Ag @ A
        sl, _ = layout.slices[f"rec{i}"]
        out[sl] = (CHRONO_PAIR_COEFF * A * acc).reshape(-1)
    return out


def kappa2_rnn(net: SharedWeightNet, p: np.ndarray) -> np.ndarray:
    if net.rnn is None:
        raise ValueError("kappa2_rnn requires a net built by build_rnn")
    return kappa2_layout(net.rnn, p)


def is_one_to_one(net: SharedWeightNet) -> bool:
    """True when every parameter is carried by exactly one edge."""
    return net.num_edges == net.num_params


def kappa2(net: SharedWeightNet, p: np.ndarray) -> np.ndarray:
    """kappa2 by the cheapest valid route: matrix form for RNN-layout nets,
    identically zero for one-to-one maps, path enumeration otherwise."""
    if net.rnn is not None:
        return kappa2_layout(net.rnn, p)
    if is_one_to_one(net):
        return np.zeros(net.num_params)
    return kappa2_bruteforce(net, p)


def kappa_decomposition(net: SharedWeightNet, p: np.ndarray) -> KappaVector:
    return KappaVector(k1=kappa1(net, p), k2=kappa2(net, p))


def preconditioner(net: SharedWeightNet, p: np.ndarray, mode: str = "k1") -> np.ndarray:
    """The kappa vector used by path-normalized updates."""
    if mode not in KAPPA_MODES:
        raise ValueError(f"unknown kappa mode {mode!r}")
    if mode == "k1":
        return kappa1(net, p)
    return kappa1(net, p) + kappa2(net, p)


def kappa_ratio(net: SharedWeightNet, p: np.ndarray) -> float:
    """||kappa2|| / ||kappa1||, the relative weight of the interaction term."""
    k1 = kappa1(net, p)
    n1 = float(np.linalg.norm(k1))
    if n1 == 0.0:
        raise ZeroDivisionError("kappa_ratio: kappa1 is identically zero")
    k2 = kappa2(net, p)
    return float(np.linalg.norm(k2)) / n1
