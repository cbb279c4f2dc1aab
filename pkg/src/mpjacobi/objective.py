"""Objective representations and problem builders.

Conventions (fixed across the package):
  node terms      phi_i(x_i)   = 1/2 <H_ii x_i, x_i> + <b_i, x_i>
  pair couplings  psi_ij(x_i, x_j) = <H_ij x_j, x_i>, stored once per edge
                  (i < j); the reverse orientation is H_ij^T.
  hyper factors   psi_w(x_w)   = <H_w x_w, x_w>  (no 1/2), H_w symmetric
                  over the stacked block order sorted(w).

Iterates are ndarrays of shape (m, d): block i is x[i].
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np


class ObjectiveError(ValueError):
    pass


class NonStochasticW(ObjectiveError):
    pass


class SingularInconsistent(ObjectiveError):
    pass


class NotQuadratic(ObjectiveError):
    pass


def as_blocks(x, m, d):
    x = np.asarray(x, dtype=float)
    if x.shape == (m, d):
        return x
    if x.shape == (m * d,):
        return x.reshape(m, d)
    raise ObjectiveError(f"expected shape ({m},{d}) or ({m * d},), got {x.shape}")


def check_block_vector(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ObjectiveError("block vector must be 2-d (m, d)")
    if not np.all(np.isfinite(x)):
        raise ObjectiveError("block vector has non-finite entries")
    return x


@dataclass
class QuadraticObjective:
    """Block quadratic objective over a graph or hypergraph."""

    m: int
    d: int
    diag: np.ndarray                    # (m, d, d) symmetric blocks H_ii
    lin: np.ndarray                     # (m, d) vectors b_i
    pair: dict = field(default_factory=dict)    # (i, j) i<j -> (d, d) block H_ij
    hyper: dict = field(default_factory=dict)   # sorted tuple w -> (|w|d, |w|d) sym

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.lin = np.asarray(self.lin, dtype=float)
        assert self.diag.shape == (self.m, self.d, self.d)
        assert self.lin.shape == (self.m, self.d)
        self.pair = {tuple(k): np.asarray(v, dtype=float) for k, v in self.pair.items()}
        self.hyper = {tuple(k): np.asarray(v, dtype=float) for k, v in self.hyper.items()}
        for (i, j), blk in self.pair.items():
            if not i < j:
                raise ObjectiveError("pair couplings must be keyed with i < j")
            if blk.shape != (self.d, self.d):
                raise ObjectiveError("bad coupling block shape")
        for w, blk in self.hyper.items():
            k = len(w) * self.d
            if blk.shape != (k, k):
                raise ObjectiveError(f"bad hyper block shape for {w}")
            if not np.allclose(blk, blk.T, atol=1e-12):
                raise ObjectiveError(f"hyper block for {w} not symmetric")

    # -- structure ---------------------------------------------------------

    @property
    def edges(self):
        return sorted(self.pair.keys())

    @property
    def hyperedges(self):
        return sorted(self.hyper.keys())

    def coupling(self, i, j):
        """Oriented block B with psi(x_i, x_j) = <B x_j, x_i>."""
        if i < j:
            return self.pair[(i, j)]
        return self.pair[(j, i)].T

    def hyper_block(self, w, rows, cols):
        """Sub-block of H_w indexed by node lists rows x cols (nodes of w)."""
        w = tuple(w)
        pos = {n: t for t, n in enumerate(w)}
        H = self.hyper[w]
        ridx = np.concatenate([np.arange(pos[n] * self.d, (pos[n] + 1) * self.d)
                               for n in rows]) if rows else np.zeros(0, dtype=int)
        cidx = np.concatenate([np.arange(pos[n] * self.d, (pos[n] + 1) * self.d)
                               for n in cols]) if cols else np.zeros(0, dtype=int)
        return H[np.ix_(ridx, cidx)]

    # -- evaluation --------------------------------------------------------

    def value(self, x):
        x = as_blocks(x, self.m, self.d)
        val = 0.0
        for i in range(self.m):
            val += 0.5 * x[i] @ self.diag[i] @ x[i] + self.lin[i] @ x[i]
        for (i, j), B in self.pair.items():
            val += x[i] @ B @ x[j]
        for w, H in self.hyper.items():
            xs = np.concatenate([x[i] for i in w])
            val += xs @ H @ xs
        return float(val)

    def grad(self, x):
        x = as_blocks(x, self.m, self.d)
        g = np.einsum("ikl,il->ik", self.diag, x) + self.lin
        for (i, j), B in self.pair.items():
            g[i] += B @ x[j]
            g[j] += B.T @ x[i]
        for w, H in self.hyper.items():
            xs = np.concatenate([x[i] for i in w])
            gw = 2.0 * (H @ xs)
            for t, i in enumerate(w):
                g[i] += gw[t * self.d:(t + 1) * self.d]
        return g

    def assemble(self):
        """Dense (md, md) Hessian and (md,) linear term of the stacked problem."""
        n = self.m * self.d
        H = np.zeros((n, n))
        for i in range(self.m):
            H[i * self.d:(i + 1) * self.d, i * self.d:(i + 1) * self.d] += self.diag[i]
        for (i, j), B in self.pair.items():
            H[i * self.d:(i + 1) * self.d, j * self.d:(j + 1) * self.d] += B
            H[j * self.d:(j + 1) * self.d, i * self.d:(i + 1) * self.d] += B.T
        for w, Hw in self.hyper.items():
            idx = np.concatenate([np.arange(i * self.d, (i + 1) * self.d) for i in w])
            H[np.ix_(idx, idx)] += 2.0 * Hw
        return H, self.lin.reshape(-1).copy()

    def graph_edges(self):
        """Edge set of the interaction graph (pairwise couplings only)."""
        return set(self.pair.keys())


@dataclass
class SmoothObjective:
    """Callback-backed smooth objective with the same block structure.

    phi[i] = (value, grad) callables on (d,) vectors.
    psi[(i, j)] = (value, grad_i, grad_j) callables on pairs, keyed i < j
    and symmetric: value(u, v) is psi evaluated at (x_i, x_j) = (u, v).
    psi_hyper[w] = (value, grad) on the stacked (|w|*d,) vector.
    """

    m: int
    d: int
    phi: list
    psi: dict = field(default_factory=dict)
    psi_hyper: dict = field(default_factory=dict)

    def pair_value(self, i, j, xi, xj):
        if i < j:
            return self.psi[(i, j)][0](xi, xj)
        return self.psi[(j, i)][0](xj, xi)

    def pair_grad_first(self, i, j, xi, xj):
        """Gradient of psi_ij w.r.t. its first listed argument x_i."""
        if i < j:
            return self.psi[(i, j)][1](xi, xj)
        return self.psi[(j, i)][2](xj, xi)

    def value(self, x):
        x = as_blocks(x, self.m, self.d)
        val = sum(self.phi[i][0](x[i]) for i in range(self.m))
        for (i, j), (v, _, _) in self.psi.items():
            val += v(x[i], x[j])
        for w, (v, _) in self.psi_hyper.items():
            val += v(np.concatenate([x[i] for i in w]))
        return float(val)

    def grad(self, x):
        x = as_blocks(x, self.m, self.d)
        g = np.stack([np.asarray(self.phi[i][1](x[i]), dtype=float)
                      for i in range(self.m)])
        for (i, j), (_, gi, gj) in self.psi.items():
            g[i] += gi(x[i], x[j])
            g[j] += gj(x[i], x[j])
        for w, (_, gw) in self.psi_hyper.items():
            gv = np.asarray(gw(np.concatenate([x[i] for i in w])), dtype=float)
            for t, i in enumerate(w):
                g[i] += gv[t * self.d:(t + 1) * self.d]
        return g

    def graph_edges(self):
        return set(self.psi.keys())


@dataclass
class GossipMatrix:
    """Doubly stochastic mixing matrix with graph-compliant sparsity."""

    W: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        m = self.W.shape[0]
        if self.W.shape != (m, m):
            raise NonStochasticW("W must be square")
        if self.gamma <= 0:
            raise NonStochasticW("gamma must be positive")
        if not (np.allclose(self.W @ np.ones(m), 1.0, atol=1e-10)
                and np.allclose(np.ones(m) @ self.W, 1.0, atol=1e-10)):
            raise NonStochasticW("W must be doubly stochastic")

    @property
    def m(self):
        return self.W.shape[0]

    def check_sparsity(self, graph):
        for i in range(self.m):
            for j in range(self.m):
                if i != j and abs(self.W[i, j]) > 0 and (min(i, j), max(i, j)) not in graph.edges:
                    raise NonStochasticW(f"W[{i},{j}] nonzero off the graph")


def metropolis_weights(graph, gamma=1.0):
    """Metropolis mixing weights: w_ij = 1/(1+max(deg_i,deg_j)) on edges."""
    m = graph.m
    W = np.zeros((m, m))
    for (i, j) in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(graph.degree(i), graph.degree(j)))
    for i in range(m):
        W[i, i] = 1.0 - W[i].sum()
    return GossipMatrix(W, gamma)


# ---------------------------------------------------------------------------
# local loss terms for consensus problems


@dataclass
class QuadraticLocal:
    """f(x) = 1/2 <Q x, x> + <c, x>."""

    Q: np.ndarray
    c: np.ndarray

    def value(self, x):
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def grad(self, x):
        return self.Q @ x + self.c

    hessian = property(lambda self: self.Q)


@dataclass
class CallableLocal:
    f: object
    g: object

    def value(self, x):
        return float(self.f(x))

    def grad(self, x):
        return np.asarray(self.g(x), dtype=float)


def build_tanh_nn(samples):
    """Per-node one-layer-network losses f(x) = 1/(2n) sum (tanh(a^T x) - b)^2.

    ``samples`` is a list of (A_i, b_i) with A_i of shape (n_i, d).
    """
    locals_ = []
    for (A, b) in samples:
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)

        def value(x, A=A, b=b):
            r = np.tanh(A @ x) - b
            return float(0.5 * np.mean(r * r))

        def grad(x, A=A, b=b):
            t = np.tanh(A @ x)
            return ((t - b) * (1.0 - t * t)) @ A / len(b)

        locals_.append(CallableLocal(value, grad))
    return locals_


@dataclass
class CtaProblem:
    """Consensus objective in lifted form:
    sum_i f_i(x_i) + (1/(2 gamma)) ||x||^2_{I - W (x) I_d}.

    Pairwise view: phi_i = f_i + (1-w_ii)/(2 gamma) ||.||^2 and
    psi_ij = -(w_ij / gamma) <x_i, x_j>.
    """

    locals_: list
    gossip: GossipMatrix
    d: int

    @property
    def m(self):
        return self.gossip.m

    @property
    def gamma(self):
        return self.gossip.gamma

    def graph_edges(self):
        W = self.gossip.W
        return {(i, j) for i in range(self.m) for j in range(i + 1, self.m)
                if abs(W[i, j]) > 0}

    def value(self, x):
        x = as_blocks(x, self.m, self.d)
        W, g = self.gossip.W, self.gamma
        val = sum(self.locals_[i].value(x[i]) for i in range(self.m))
        val += sum((1.0 - W[i, i]) / (2 * g) * x[i] @ x[i] for i in range(self.m))
        for (i, j) in self.graph_edges():
            val -= (W[i, j] / g) * (x[i] @ x[j])
        return float(val)

    def grad(self, x):
        x = as_blocks(x, self.m, self.d)
        W, g = self.gossip.W, self.gamma
        out = np.stack([self.locals_[i].grad(x[i]) for i in range(self.m)])
        out += ((1.0 - np.diag(W)) / g)[:, None] * x
        out -= ((W - np.diag(np.diag(W))) @ x) / g
        return out

    def is_quadratic(self):
        return all(isinstance(f, QuadraticLocal) for f in self.locals_)

    def to_quadratic(self):
        if not self.is_quadratic():
            raise NotQuadratic("CTA problem has non-quadratic local losses")
        W, g = self.gossip.W, self.gamma
        diag = np.stack([f.Q + (1.0 - W[i, i]) / g * np.eye(self.d)
                         for i, f in enumerate(self.locals_)])
        lin = np.stack([f.c for f in self.locals_])
        pair = {(i, j): -(W[i, j] / g) * np.eye(self.d) for (i, j) in self.graph_edges()}
        return QuadraticObjective(self.m, self.d, diag, lin, pair)

    def to_smooth(self):
        phi = []
        W, g = self.gossip.W, self.gamma
        for i, f in enumerate(self.locals_):
            c = (1.0 - W[i, i]) / g

            def val(x, f=f, c=c):
                return f.value(x) + 0.5 * c * x @ x

            def grd(x, f=f, c=c):
                return f.grad(x) + c * x

            phi.append((val, grd))
        psi = {}
        for (i, j) in sorted(self.graph_edges()):
            wij = W[i, j] / g
            psi[(i, j)] = (
                lambda u, v, w=wij: -w * float(u @ v),
                lambda u, v, w=wij: -w * v,
                lambda u, v, w=wij: -w * u,
            )
        return SmoothObjective(self.m, self.d, phi, psi)


def build_cta(locals_, gossip, d=None):
    """Lifted combine-then-adapt consensus objective."""
    if d is None:
        d = _infer_d(locals_)
    return CtaProblem(list(locals_), gossip, d)


def _infer_d(locals_):
    for f in locals_:
        if isinstance(f, QuadraticLocal):
            return f.Q.shape[0]
    raise ObjectiveError("cannot infer block dimension; pass d explicitly")


def build_atc(locals_, gossip, d=None):
    """Adapt-then-combine objective as a hypergraph quadratic.

    Hyperedges are the supports of the rows of W^2; the factor built from
    row i wraps f_i(sum_j w_ij x_j) plus row i's share of the
    (1/(2 gamma)) ||x||^2_{I - W^2 (x) I} regularizer. Rows with identical
    support are merged into one factor. Quadratic local losses only.
    """
    if d is None:
        d = _infer_d(locals_)
    if not all(isinstance(f, QuadraticLocal) for f in locals_):
        raise NotQuadratic("ATC builder requires quadratic local losses")
    W = gossip.W
    g = gossip.gamma
    m = gossip.m
    W2 = W @ W
    R = np.eye(m) - W2  # scalar pattern of the regularizer

    supports = []
    for i in range(m):
        supp = tuple(sorted(np.nonzero(np.abs(W2[i]) > 1e-14)[0].tolist()))
        if i not in supp:
            supp = tuple(sorted(set(supp) | {i}))
        supports.append(supp)

    factors = {}
    lin = np.zeros((m, d))
    for i in range(m):
        w = supports[i]
        pos = {n: t for t, n in enumerate(w)}
        k = len(w) * d
        Hw = np.zeros((k, k))
        # f_i quadratic part: 1/2 (sum_j w_ij x_j)^T Q (sum...) as <H x, x>
        Q = locals_[i].Q
        for a in w:
            for b in w:
                Hw[pos[a] * d:(pos[a] + 1) * d, pos[b] * d:(pos[b] + 1) * d] += (
                    0.5 * W[i, a] * W[i, b] * Q)
        # f_i linear part -> node linear terms
        for a in w:
            lin[a] += W[i, a] * locals_[i].c
        # regularizer row i: (1/(2g)) <(I - W^2)_{i,:} x, x_i>
        Hw[pos[i] * d:(pos[i] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += (
            R[i, i] / (2 * g) * np.eye(d))
        for a in w:
            if a == i:
                continue
            blk = R[i, a] / (4 * g) * np.eye(d)
            Hw[pos[i] * d:(pos[i] + 1) * d, pos[a] * d:(pos[a] + 1) * d] += blk
            Hw[pos[a] * d:(pos[a] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += blk
        if w in factors:
            factors[w] = factors[w] + Hw
        else:
            factors[w] = Hw

    diag = np.zeros((m, d, d))
    return QuadraticObjective(m, d, diag, lin, pair={}, hyper=factors)


def build_laplacian_qp(weights, b):
    """Graph-signal quadratic 1/2 x^T L x - b^T x with L the weighted Laplacian."""
    weights = np.asarray(weights, dtype=float)
    b = np.asarray(b, dtype=float)
    m = weights.shape[0]
    if not np.allclose(weights, weights.T) or np.any(np.diag(weights) != 0):
        raise ObjectiveError("weights must be symmetric with zero diagonal")
    if np.any(weights < 0):
        raise ObjectiveError("weights must be nonnegative")
    deg = weights.sum(axis=1)
    diag = deg.reshape(m, 1, 1).copy()
    lin = -b.reshape(m, 1)
    pair = {(i, j): np.array([[-weights[i, j]]])
            for i in range(m) for j in range(i + 1, m) if weights[i, j] > 0}
    return QuadraticObjective(m, 1, diag, lin, pair)


def build_random_qp(graph, d, target_kappa, seed):
    """Random symmetric blocks on the graph sparsity, shifted to a target
    condition number. Deterministic under ``seed``.
    """
    if target_kappa <= 1:
        raise ObjectiveError("target_kappa must exceed 1")
    rng = np.random.default_rng(seed)
    m = graph.m
    diag = np.zeros((m, d, d))
    for i in range(m):
        A = rng.standard_normal((d, d))
        diag[i] = 0.5 * (A + A.T)
    pair = {}
    for (i, j) in sorted(graph.edges):
        pair[(i, j)] = rng.standard_normal((d, d))
    lin = rng.standard_normal((m, d))
    q = QuadraticObjective(m, d, diag, lin, pair)
    H, _ = q.assemble()
    vals = np.linalg.eigvalsh(H)
    lo, hi = vals[0], vals[-1]
    # (hi + c) / (lo + c) = kappa  =>  c = (hi - kappa * lo) / (kappa - 1)
    c = (hi - target_kappa * lo) / (target_kappa - 1.0)
    q.diag = diag + c * np.eye(d)
    return q


def global_solve_oracle(q):
    """Ground-truth minimizer of an assembled quadratic.

    Positive definite Hessians are solved directly; PSD ones fall back to
    the min-norm solution provided the system is consistent.
    Returns (x_star, phi_star).
    """
    H, b = q.assemble()
    vals = np.linalg.eigvalsh(H)
    scale = max(abs(vals[-1]), 1.0)
    if vals[0] > 1e-12 * scale:
        xs = np.linalg.solve(H, -b)
    else:
        if vals[0] < -1e-10 * scale:
            raise SingularInconsistent("Hessian is not positive semidefinite")
        xs = np.linalg.pinv(H, rcond=1e-12) @ (-b)
        resid = np.linalg.norm(H @ xs + b)
        if resid > 1e-8 * (np.linalg.norm(H) * np.linalg.norm(xs) + np.linalg.norm(b) + 1.0):
            raise SingularInconsistent("singular Hessian with inconsistent linear term")
    x = xs.reshape(q.m, q.d)
    return x, q.value(x)


# ---------------------------------------------------------------------------
# serialization


def _encode_array(a, binary):
    a = np.asarray(a, dtype=float)
    if binary:
        return {"shape": list(a.shape),
                "b64": base64.b64encode(np.ascontiguousarray(a).tobytes()).decode()}
    return a.tolist()


def _decode_array(obj):
    if isinstance(obj, dict):
        return np.frombuffer(base64.b64decode(obj["b64"]), dtype=float).reshape(obj["shape"]).copy()
    return np.asarray(obj, dtype=float)


def problem_to_json(q, binary=False, seed=None):
    """Stable JSON layout: {kind, m, d, diag, lin, pair, hyper, seed}."""
    doc = {
        "kind": "quadratic",
        "m": q.m,
        "d": q.d,
        "diag": _encode_array(q.diag, binary),
        "lin": _encode_array(q.lin, binary),
        "pair": [[i, j, _encode_array(B, binary)] for (i, j), B in sorted(q.pair.items())],
        "hyper": [[list(w), _encode_array(H, binary)] for w, H in sorted(q.hyper.items())],
    }
    if seed is not None:
        doc["seed"] = seed
    return json.dumps(doc)


def problem_from_json(text):
    doc = json.loads(text)
    if doc["kind"] != "quadratic":
        raise ObjectiveError(f"unsupported problem kind {doc['kind']!r}")
    pair = {(int(i), int(j)): _decode_array(B) for i, j, B in doc["pair"]}
    hyper = {tuple(int(t) for t in w): _decode_array(H) for w, H in doc["hyper"]}
    return QuadraticObjective(int(doc["m"]), int(doc["d"]),
                              _decode_array(doc["diag"]), _decode_array(doc["lin"]),
                              pair, hyper)
