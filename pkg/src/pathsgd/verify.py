"""Executable correctness properties, surfaced by the ``verify`` subcommand.

Each property draws randomized desk-scale instances, compares an efficient
implementation against an independent oracle or an exact mathematical
identity, and reports its worst residual.  The quick level runs in a few
seconds; the full level uses the larger sample counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import compute, invariance, optim, pathnorm
from .graph import RnnSpec, SharedWeightNet, build_feedforward, build_rnn


@dataclass
class PropertyResult:
    name: str
    passed: bool
    worst: float
    threshold: float
    n: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (f"{status} {self.name}: worst={self.worst:.3e} "
                f"threshold={self.threshold:.0e} n={self.n}{extra}")


def random_spec(rng: np.random.Generator, max_hidden: int = 3,
                max_len: int = 4, max_depth: int = 2) -> RnnSpec:
    depth = int(rng.integers(1, max_depth + 1))
    return RnnSpec(
        input_dim=int(rng.integers(1, 3)),
        hidden_dims=tuple(int(rng.integers(1, max_hidden + 1)) for _ in range(depth)),
        output_dim=int(rng.integers(1, 3)),
        length=int(rng.integers(1, max_len + 1)),
        bias=bool(rng.integers(0, 2)))


def random_net(rng: np.random.Generator, **kw) -> SharedWeightNet:
    """A small random net: an unrolled RNN or, sometimes, a plain MLP."""
    if rng.uniform() < 0.25:
        depth = int(rng.integers(2, 4))
        dims = [int(rng.integers(1, 4)) for _ in range(depth + 1)]
        return build_feedforward(dims)
    return build_rnn(random_spec(rng, **kw))


def random_params(net: SharedWeightNet, rng: np.random.Generator,
                  lo: float = -1.5, hi: float = 1.5) -> np.ndarray:
    return rng.uniform(lo, hi, net.num_params)


def _kink_free(net: SharedWeightNet, p: np.ndarray, batch, margin: float) -> bool:
    for x, _ in batch:
        _, tr = compute.forward(net, p, x)
        for nd in net.nodes:
            if nd.kind != "internal" or abs(tr.pre[nd.idx]) > margin:
                continue
            # pre near 0 is harmless when every source is dead: then pre is
            # identically 0 in a neighborhood of p and the node is smooth.
            if any(tr.values[u] != 0.0 for u, _ in net.incoming[nd.idx]):
                return False
    return True


def sample_kink_free(net: SharedWeightNet, rng: np.random.Generator,
                     batch, margin: float = 1e-2, tries: int = 200):
    """Parameters whose ReLU pre-activations stay at least ``margin`` from
    zero on the given batch, so finite differences see a smooth function."""
    for _ in range(tries):
        p = random_params(net, rng)
        if _kink_free(net, p, batch, margin):
            return p
    raise RuntimeError("could not sample kink-free parameters")


def _rel(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def check_gamma_oracle(rng, n, threshold=1e-10) -> PropertyResult:
    """Recursive path-regularizer equals brute-force path enumeration."""
    worst = 0.0
    for _ in range(n):
        net = random_net(rng)
        p = random_params(net, rng)
        g_fast = pathnorm.gamma_recursive(net, p)
        g_slow = pathnorm.gamma_bruteforce(net, p)
        worst = max(worst, abs(g_fast - g_slow) / max(abs(g_slow), 1e-12))
    return PropertyResult("gamma-oracle", worst <= threshold, worst, threshold, n)


def check_kappa_decomposition(rng, n, threshold=1e-4, kappa_scale=1.0) -> PropertyResult:
    """kappa1 + kappa2 matches the finite-difference second derivative."""
    worst = 0.0
    for _ in range(n):
        net = random_net(rng)
        p = random_params(net, rng)
        total = kappa_scale * pathnorm.kappa1(net, p) + pathnorm.kappa2(net, p)
        fd = pathnorm.kappa_fd(net, p)
        worst = max(worst, _rel(total, fd, 1.0))
    return PropertyResult("kappa-decomposition", worst <= threshold, worst, threshold, n)


def check_kappa2_closed_form(rng, n, threshold=1e-10) -> PropertyResult:
    """The recurrent matrix form of kappa2 equals pair enumeration."""
    worst = 0.0
    for _ in range(n):
        net = build_rnn(random_spec(rng))
        p = random_params(net, rng)
        k2_fast = pathnorm.kappa2_rnn(net, p)
        k2_slow = pathnorm.kappa2_bruteforce(net, p)
        worst = max(worst, _rel(k2_fast, k2_slow, 1.0))
    return PropertyResult("kappa2-closed-form", worst <= threshold, worst, threshold, n)


def check_feedforward_kappa2_zero(rng, n) -> PropertyResult:
    """Without weight sharing, the interaction term vanishes identically."""
    worst = 0.0
    for _ in range(n):
        depth = int(rng.integers(2, 4))
        dims = [int(rng.integers(1, 4)) for _ in range(depth + 1)]
        net = build_feedforward(dims)
        p = random_params(net, rng)
        worst = max(worst, float(np.max(np.abs(pathnorm.kappa2(net, p)))))
    return PropertyResult("feedforward-kappa2-zero", worst == 0.0, worst, 0.0, n,
                          detail="(exact)")


def check_rescaling_invariance(rng, n, threshold=1e-10) -> PropertyResult:
    """Feasible node-wise rescalings preserve the function and gamma^2."""
    worst = 0.0
    for _ in range(n):
        spec = random_spec(rng)
        net = build_rnn(spec)
        p = random_params(net, rng)
        alpha = invariance.random_rescaling(spec, rng, 1.5)
        q = invariance.apply_rescaling(spec, p, alpha)
        assert invariance.is_feasible(net, invariance.edge_multipliers(net, alpha))
        X = rng.standard_normal((3, spec.length, spec.input_dim))
        ya = compute.rnn_forward(net.rnn, p, X).y
        yb = compute.rnn_forward(net.rnn, q, X).y
        scale = max(1.0, float(np.max(np.abs(ya))))
        worst = max(worst, float(np.max(np.abs(ya - yb))) / scale)
        ga = pathnorm.gamma_recursive(net, p)
        gb = pathnorm.gamma_recursive(net, q)
        worst = max(worst, abs(ga - gb) / max(abs(ga), 1e-12))
    return PropertyResult("rescaling-invariance", worst <= threshold, worst, threshold, n)


def _trajectory_gap(net, spec, p, q, stepper, steps, rng):
    """Max output gap between trainings started from equivalent parameters."""
    X = rng.standard_normal((4, spec.length, spec.input_dim))
    pa, qa = p.copy(), q.copy()
    for _ in range(steps):
        tra = compute.rnn_forward(net.rnn, pa, X)
        trb = compute.rnn_forward(net.rnn, qa, X)
        ga = compute.rnn_backward(net.rnn, pa, tra, tra.y)
        gb = compute.rnn_backward(net.rnn, qa, trb, trb.y)
        pa = stepper(pa, ga)
        qa = stepper(qa, gb)
    ya = compute.rnn_forward(net.rnn, pa, X).y
    yb = compute.rnn_forward(net.rnn, qa, X).y
    scale = max(1.0, float(np.max(np.abs(ya))))
    return float(np.max(np.abs(ya - yb))) / scale


def check_path_sgd_invariance(rng, n, threshold=1e-8, steps=3,
                              kappa_scale=1.0) -> PropertyResult:
    """Path-SGD trajectories commute with rescaling, in both kappa modes."""
    worst = 0.0
    for _ in range(n):
        spec = random_spec(rng)
        net = build_rnn(spec)
        p = random_params(net, rng, -0.9, 0.9)
        alpha = invariance.random_rescaling(spec, rng, 1.0)
        q = invariance.apply_rescaling(spec, p, alpha)
        for mode in pathnorm.KAPPA_MODES:
            def stepper(pp, gg, mode=mode):
                kap = kappa_scale * pathnorm.preconditioner(net, pp, mode)
                return optim.path_sgd_step(net, pp, gg, 0.05, kappa=kap)
            worst = max(worst, _trajectory_gap(net, spec, p, q, stepper, steps, rng))
    return PropertyResult("path-sgd-invariance", worst <= threshold, worst, threshold, n)


def check_sgd_not_invariant(rng, n, threshold=1e-3, steps=3) -> PropertyResult:
    """Negative control: plain SGD must break under the same rescalings."""
    worst = 0.0
    for _ in range(n):
        spec = random_spec(rng, max_len=4)
        net = build_rnn(spec)
        p = random_params(net, rng, -0.9, 0.9)
        alpha = invariance.random_rescaling(spec, rng, 1.5)
        q = invariance.apply_rescaling(spec, p, alpha)
        gap = _trajectory_gap(net, spec, p, q,
                              lambda pp, gg: optim.sgd_step(pp, gg, 0.05), steps, rng)
        worst = max(worst, gap)
    return PropertyResult("sgd-not-invariant", worst > threshold, worst, threshold, n,
                          detail="(passes when the gap exceeds the threshold)")


def check_gradient(rng, n, threshold=1e-5) -> PropertyResult:
    """Backpropagation matches central differences away from ReLU kinks."""
    worst = 0.0
    for _ in range(n):
        net = random_net(rng)
        kind = "mse"
        out_dim = len(net.output_ids)
        batch = []
        for _ in range(2):
            x = rng.standard_normal(len(net.input_ids))
            t = rng.standard_normal(out_dim)
            batch.append((x, t))
        p = sample_kink_free(net, rng, batch)
        g = compute.grad(net, p, batch, kind=kind)
        g_fd = compute.finite_diff_grad(net, p, batch, kind=kind)
        worst = max(worst, float(np.max(np.abs(g - g_fd) /
                                        np.maximum(np.abs(g_fd), 1e-3))))
    return PropertyResult("gradient-check", worst <= threshold, worst, threshold, n)


LEVELS = {
    "quick": dict(gamma=8, decomp=5, closed=5, ffzero=5, rescale=20,
                  inv=5, control=5, grad=10),
    "full": dict(gamma=50, decomp=20, closed=20, ffzero=20, rescale=100,
                 inv=50, control=10, grad=50),
}


def run_all(level: str = "quick", seed: int = 0,
            kappa_scale: float = 1.0) -> list[PropertyResult]:
    if level not in LEVELS:
        raise ValueError(f"unknown verify level {level!r}")
    sizes = LEVELS[level]
    rng = np.random.default_rng(seed)
    return [
        check_gamma_oracle(rng, sizes["gamma"]),
        check_kappa_decomposition(rng, sizes["decomp"], kappa_scale=kappa_scale),
        check_kappa2_closed_form(rng, sizes["closed"]),
        check_feedforward_kappa2_zero(rng, sizes["ffzero"]),
        check_rescaling_invariance(rng, sizes["rescale"]),
        check_path_sgd_invariance(rng, sizes["inv"], kappa_scale=kappa_scale),
        check_sgd_not_invariant(rng, sizes["control"]),
        check_gradient(rng, sizes["grad"]),
    ]
