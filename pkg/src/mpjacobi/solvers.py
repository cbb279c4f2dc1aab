"""Iterative schemes: message-passing Jacobi solvers (exact and surrogate,
pairwise and hypergraph), the delayed block-Jacobi reference, classical
baselines, and theorem-driven stepsize selection.

Synchronous round semantics: every update in round nu reads the committed
round-nu snapshot (iterates and messages); results are independent of the
update order within a round.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .messages import (
    MessageSet,
    QuadraticMessage,
    SingularSenderCurvature,
    cta_partial_linearization_message,
    diagonalize_message,
    first_order_message,
    hyper_factor_message,
    is_diagonal,
    schur_message_update,
    struct_solve,
    SurrogateSpec,
)
from .objective import (
    CtaProblem,
    NotQuadratic,
    QuadraticObjective,
    SmoothObjective,
    as_blocks,
)


class SolverError(RuntimeError):
    pass


class IllPosedSubproblem(SolverError):
    pass


class NonConvergent(SolverError):
    pass


class InfeasibleCondition(SolverError):
    pass


@dataclass
class SolverConfig:
    tau: object = 1.0               # float, per-cluster array, or schedule callable
    max_rounds: int = 10000
    tol_x: float = 1e-12            # sup-norm of the iterate increment
    tol_grad: float = None
    seed: int = 0
    surrogate: SurrogateSpec = None
    factor_impl: str = "hosted_factor"   # or 'factor_processor'
    message_init: str = "zero"           # or 'warm_start'
    exact_variable_update: bool = False  # surrogate messages, exact variable step
    monitor: bool = False                # record xhat/xbar internals per round
    track_oracle: tuple = None           # (x_star, phi_star) for gap columns
    raise_on_max_rounds: bool = False

    def tau_for_cluster(self, r, p):
        if callable(self.tau):
            return self.tau(r)
        if np.isscalar(self.tau):
            return float(self.tau)
        return float(np.asarray(self.tau)[r])


@dataclass
class RunTrace:
    rounds: int = 0
    phi_gap: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    dist_to_opt: list = field(default_factory=list)
    vectors_sent: list = field(default_factory=list)   # cumulative
    converged: bool = False
    diverged: bool = False
    x_final: np.ndarray = None
    x_history: list = None          # only when monitoring
    xhat_history: list = None
    monitor: object = None

    def record(self, problem, x, comm_total, oracle):
        g = problem.grad(x)
        self.grad_norm.append(float(np.linalg.norm(g)))
        if oracle is not None:
            x_star, phi_star = oracle
            self.phi_gap.append(float(problem.value(x) - phi_star))
            self.dist_to_opt.append(float(np.linalg.norm(x - x_star)))
        else:
            self.phi_gap.append(float("nan"))
            self.dist_to_opt.append(float("nan"))
        self.vectors_sent.append(int(comm_total))

    def to_csv(self):
        lines = ["round,phi_gap,grad_norm,dist_to_opt,vectors_sent"]
        for k in range(len(self.grad_norm)):
            lines.append(f"{k},{self.phi_gap[k]:.17g},{self.grad_norm[k]:.17g},"
                         f"{self.dist_to_opt[k]:.17g},{self.vectors_sent[k]}")
        return "\n".join(lines) + "\n"

    def iterations_to(self, metric, tol):
        vals = getattr(self, metric)
        for k, v in enumerate(vals):
            if not math.isnan(v) and v <= tol:
                return k
        return None


# ---------------------------------------------------------------------------
# pairwise engines


class _PairwiseLayout:
    """Index arrays for batched pairwise rounds on a tree partition."""

    def __init__(self, problem, partition):
        self.m, self.d = problem.m, problem.d
        senders, receivers, blocks = [], [], []
        key_of = {}
        for r, edges in enumerate(partition.intra_edges):
            for (a, b) in sorted(edges):
                for (s, t) in ((a, b), (b, a)):
                    key_of[(s, t)] = len(senders)
                    senders.append(s)
                    receivers.append(t)
                    blocks.append(problem.coupling(t, s))
        self.senders = np.array(senders, dtype=int)
        self.receivers = np.array(receivers, dtype=int)
        self.B = (np.stack(blocks) if blocks
                  else np.zeros((0, self.d, self.d)))
        self.rev = np.array([key_of[(receivers[e], senders[e])]
                             for e in range(len(senders))], dtype=int)
        self.key_of = key_of
        self.n_edges = len(senders)

        csrc, cdst, cblocks = [], [], []
        intra_pairs = {e for edges in partition.intra_edges for e in edges}
        for (i, j) in sorted(problem.graph_edges()):
            if (i, j) in intra_pairs:
                continue
            csrc.append(i); cdst.append(j); cblocks.append(problem.coupling(i, j))
            csrc.append(j); cdst.append(i); cblocks.append(problem.coupling(j, i))
        self.csrc = np.array(csrc, dtype=int)
        self.cdst = np.array(cdst, dtype=int)
        self.CB = (np.stack(cblocks) if cblocks
                   else np.zeros((0, self.d, self.d)))
        self.tau_node = None  # filled by the solver

    def cross_lin(self, x):
        out = np.zeros((self.m, self.d))
        if len(self.csrc):
            np.add.at(out, self.csrc, np.einsum("cde,ce->cd", self.CB, x[self.cdst]))
        return out

    def record_comm(self, H_msg):
        """Vectors sent this round: one per directed cross incidence for the
        iterates, plus per-message cost (matrix counts d, diagonal 1, zero 0,
        plus one vector for the linear part).
        """
        return len(self.csrc) + _edge_message_cost(H_msg, self.d)


def _exact_round(problem, lay, H_msg, h_msg, x, tau_node, update_x=True):
    """One synchronous round of exact quadratic message passing."""
    inH = problem.diag.copy()
    inh = problem.lin + lay.cross_lin(x)
    if lay.n_edges:
        np.add.at(inH, lay.receivers, H_msg)
        np.add.at(inh, lay.receivers, h_msg)
    x_next = x
    if update_x:
        try:
            xhat = -np.linalg.solve(inH, inh[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise IllPosedSubproblem(f"variable update: {exc}") from exc
        x_next = x + tau_node[:, None] * (xhat - x)
    else:
        xhat = None
    if lay.n_edges:
        A = inH[lay.senders] - H_msg[lay.rev]
        c = inh[lay.senders] - h_msg[lay.rev]
        rhs = np.concatenate([np.transpose(lay.B, (0, 2, 1)), c[..., None]], axis=2)
        try:
            X = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSenderCurvature(f"message update: {exc}") from exc
        H_new = -np.matmul(lay.B, X[:, :, :problem.d])
        H_new = 0.5 * (H_new + np.transpose(H_new, (0, 2, 1)))
        h_new = -np.matmul(lay.B, X[:, :, problem.d:])[..., 0]
    else:
        H_new, h_new = H_msg, h_msg
    return x_next, xhat, H_new, h_new


def _warm_start_messages(problem, lay, x0, sweeps):
    d = problem.d
    H_msg = np.zeros((lay.n_edges, d, d))
    h_msg = np.zeros((lay.n_edges, d))
    tau0 = np.zeros(problem.m)
    for _ in range(sweeps):
        _, _, H_msg, h_msg = _exact_round(problem, lay, H_msg, h_msg, x0,
                                          tau0, update_x=False)
    return H_msg, h_msg


def _tau_per_node(partition, config):
    p = partition.p
    taus = np.array([config.tau_for_cluster(r, p) for r in range(p)])
    if np.any(taus < 0):
        raise SolverError("stepsizes must be nonnegative")
    return taus[np.array(partition.cluster_of)], taus


def mp_jacobi(problem, partition, config=None, x0=None):
    """Exact message-passing Jacobi on a quadratic pairwise problem.

    Per round every agent solves its local minimization from the round-nu
    messages and out-of-cluster iterates, damps by the cluster stepsize, and
    every directed intra-cluster edge refreshes its message from the same
    snapshot.
    """
    config = config or SolverConfig()
    if not isinstance(problem, QuadraticObjective) or problem.hyper:
        raise NotQuadratic("exact pairwise solver needs a pairwise QuadraticObjective")
    lay = _PairwiseLayout(problem, partition)
    tau_node, _ = _tau_per_node(partition, config)
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()

    if config.message_init == "warm_start":
        H_msg, h_msg = _warm_start_messages(problem, lay, x, partition.max_diameter)
    else:
        H_msg = np.zeros((lay.n_edges, d, d))
        h_msg = np.zeros((lay.n_edges, d))

    trace = RunTrace()
    if config.monitor:
        trace.x_history = [x.copy()]
        trace.xhat_history = []
    comm = 0
    oracle = config.track_oracle
    trace.record(problem, x, comm, oracle)
    for k in range(config.max_rounds):
        x_new, xhat, H_msg, h_msg = _exact_round(problem, lay, H_msg, h_msg,
                                                 x, tau_node)
        comm += lay.record_comm(H_msg)
        step = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        x = x_new
        trace.record(problem, x, comm, oracle)
        if config.monitor:
            trace.x_history.append(x.copy())
            trace.xhat_history.append(xhat.copy())
        trace.rounds = k + 1
        if step <= config.tol_x:
            trace.converged = True
            break
        if config.tol_grad is not None and trace.grad_norm[-1] <= config.tol_grad:
            trace.converged = True
            break
    if not trace.converged and config.raise_on_max_rounds:
        raise NonConvergent(f"no convergence in {config.max_rounds} rounds")
    trace.x_final = x
    return trace


# -- surrogate pairwise -----------------------------------------------------


def _pair_grad(problem, i, j, xi, xj):
    """grad_{x_i} psi_ij at (x_i, x_j) for either problem representation."""
    if isinstance(problem, QuadraticObjective):
        return problem.coupling(i, j) @ xj
    return problem.pair_grad_first(i, j, xi, xj)


def _phi_grad(problem, i, xi):
    if isinstance(problem, QuadraticObjective):
        return problem.diag[i] @ xi + problem.lin[i]
    return np.asarray(problem.phi[i][1](xi), dtype=float)


def mp_jacobi_surrogate(problem, partition, config=None, x0=None):
    """Message-passing Jacobi with a surrogate family.

    family='exact' delegates to :func:`mp_jacobi` (bit-identical updates).
    'first_order' works on quadratic and smooth pairwise problems;
    'schur_quadratic' needs quadratic couplings; 'partial_linearization'
    expects a lifted consensus problem (:class:`CtaProblem`).
    """
    config = config or SolverConfig()
    spec = config.surrogate or SurrogateSpec()
    if spec.family == "exact":
        return mp_jacobi(problem, partition, config, x0)
    if spec.family == "partial_linearization":
        return _cta_partial_linearization_run(problem, partition, config, x0, spec)
    if spec.family == "first_order":
        return _first_order_run(problem, partition, config, x0, spec)
    if spec.family == "schur_quadratic":
        return _schur_run(problem, partition, config, x0, spec)
    raise SolverError(f"unsupported family {spec.family!r}")


def _directed_intra(partition):
    out = []
    for edges in partition.intra_edges:
        for (a, b) in sorted(edges):
            out.append((a, b))
            out.append((b, a))
    return out


def _first_order_run(problem, partition, config, x0, spec):
    m = problem.m
    d = problem.d
    alpha = spec.alpha
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    tau_node, _ = _tau_per_node(partition, config)
    dir_edges = _directed_intra(partition)
    msgs = MessageSet([(s, t) for (s, t) in dir_edges], d)
    cross = [(i, k) for i in range(m) for k in partition.n_out[i]]

    trace = RunTrace()
    comm = 0
    oracle = config.track_oracle
    trace.record(problem, x, comm, oracle)
    for k in range(config.max_rounds):
        grads = np.zeros((m, d))
        for i in range(m):
            grads[i] = _phi_grad(problem, i, x[i])
        for (i, kk) in cross:
            grads[i] += _pair_grad(problem, i, kk, x[i], x[kk])
        for (s, t) in dir_edges:
            grads[t] += msgs.get((s, t)).h
        xhat = x - alpha * grads
        for (s, t) in dir_edges:
            msgs.put((s, t), first_order_message(_pair_grad(problem, t, s, x[t], x[s])))
            comm += 1
        comm += len(cross)
        x_new = x + tau_node[:, None] * (xhat - x)
        msgs.commit()
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        trace.record(problem, x, comm, oracle)
        trace.rounds = k + 1
        if step <= config.tol_x or (config.tol_grad is not None
                                    and trace.grad_norm[-1] <= config.tol_grad):
            trace.converged = True
            break
    trace.x_final = x
    return trace


def delayed_gradient_reference(problem, partition, config, x0, alpha):
    """Explicit gradient-delayed recursion equivalent to the first-order
    family: intra-cluster coupling gradients are read one round late (zero
    before the first round, matching zero message initialization).
    """
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    x_prev = None
    tau_node, _ = _tau_per_node(partition, config)
    iterates = [x.copy()]
    for _ in range(config.max_rounds):
        g = np.zeros((m, d))
        for i in range(m):
            g[i] = _phi_grad(problem, i, x[i])
            for kk in partition.n_out[i]:
                g[i] += _pair_grad(problem, i, kk, x[i], x[kk])
            if x_prev is not None:
                for j in partition.n_in[i]:
                    g[i] += _pair_grad(problem, i, j, x_prev[i], x_prev[j])
        xhat = x - alpha * g
        x_prev = x
        x = x + tau_node[:, None] * (xhat - x)
        iterates.append(x.copy())
    return iterates


def _schur_run(problem, partition, config, x0, spec):
    if not isinstance(problem, QuadraticObjective):
        raise NotQuadratic("schur_quadratic family needs quadratic couplings")
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    tau_node, _ = _tau_per_node(partition, config)
    dir_edges = _directed_intra(partition)
    msgs = MessageSet(dir_edges, d)
    in_edges = [[] for _ in range(m)]
    for (s, t) in dir_edges:
        in_edges[t].append(s)
    cross = [(i, k) for i in range(m) for k in partition.n_out[i]]

    Q = [spec.node_matrix("Q", i, d) for i in range(m)]
    Mn = [spec.node_matrix("M", i, d) for i in range(m)]

    trace = RunTrace()
    comm = 0
    oracle = config.track_oracle
    trace.record(problem, x, comm, oracle)
    for k in range(config.max_rounds):
        xhat = np.zeros((m, d))
        for i in range(m):
            if config.exact_variable_update:
                G = problem.diag[i].copy()
                g = problem.lin[i].copy()
            else:
                G = Q[i].copy()
                g = _phi_grad(problem, i, x[i]) - Q[i] @ x[i]
            for s in in_edges[i]:
                msg = msgs.get((s, i))
                G = G + msg.H
                g = g + msg.h
            for kk in partition.n_out[i]:
                if config.exact_variable_update:
                    g = g + problem.coupling(i, kk) @ x[kk]
                else:
                    G = G + Mn[i]
                    g = g + _pair_grad(problem, i, kk, x[i], x[kk]) - Mn[i] @ x[i]
            xhat[i] = -struct_solve(G, g)
        for (s, t) in dir_edges:
            M_st = spec.edge_matrix(s, t, d)
            boundary = np.zeros(d)
            for kk in partition.n_out[s]:
                boundary += _pair_grad(problem, s, kk, x[s], x[kk])
            new = schur_message_update(
                Q_j=Q[s], M_j=Mn[s], M_i=Mn[t], M_ij=M_st,
                grad_phi_j=_phi_grad(problem, s, x[s]),
                grad_j_psi=_pair_grad(problem, s, t, x[s], x[t]),
                grad_i_psi=_pair_grad(problem, t, s, x[t], x[s]),
                x_j_ref=x[s], x_i_ref=x[t],
                incoming=[msgs.get((u, s)) for u in in_edges[s] if u != t],
                boundary_grad=boundary)
            msgs.put((s, t), new)
            comm += new.vector_cost()
        comm += len(cross)
        x_new = x + tau_node[:, None] * (xhat - x)
        msgs.commit()
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        trace.record(problem, x, comm, oracle)
        trace.rounds = k + 1
        if step <= config.tol_x or (config.tol_grad is not None
                                    and trace.grad_norm[-1] <= config.tol_grad):
            trace.converged = True
            break
    trace.x_final = x
    trace.monitor = msgs
    return trace


def _cta_partial_linearization_run(problem, partition, config, x0, spec):
    """Batched rounds of the partial-linearization family on a lifted
    consensus problem; diagonal node curvatures keep the message curvatures
    exactly diagonal.
    """
    if not isinstance(problem, CtaProblem):
        raise SolverError("partial_linearization expects a lifted consensus problem")
    m, d = problem.m, problem.d
    W, gamma = problem.gossip.W, problem.gamma
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    tau_node, _ = _tau_per_node(partition, config)

    dir_edges = _directed_intra(partition)
    key_of = {e: idx for idx, e in enumerate(dir_edges)}
    E = len(dir_edges)
    senders = np.array([s for (s, t) in dir_edges], dtype=int)
    receivers = np.array([t for (s, t) in dir_edges], dtype=int)
    rev = np.array([key_of[(t, s)] for (s, t) in dir_edges], dtype=int)
    w_edge = np.array([W[s, t] for (s, t) in dir_edges])
    csrc, cdst, cw = [], [], []
    for i in range(m):
        for kk in partition.n_out[i]:
            csrc.append(i)
            cdst.append(kk)
            cw.append(W[i, kk])
    csrc = np.array(csrc, dtype=int)
    cdst = np.array(cdst, dtype=int)
    cw = np.array(cw)

    Q = np.stack([spec.node_matrix("Q", i, d) for i in range(m)])
    base = Q + ((1.0 - np.diag(W)) / gamma)[:, None, None] * np.eye(d)
    H_msg = np.zeros((E, d, d))
    h_msg = np.zeros((E, d))
    eye = np.eye(d)

    trace = RunTrace()
    comm = 0
    oracle = config.track_oracle
    trace.record(problem, x, comm, oracle)
    for k in range(config.max_rounds):
        nodeS = base.copy()
        node_ell = np.stack([problem.locals_[i].grad(x[i]) for i in range(m)])
        node_ell -= np.einsum("ikl,il->ik", Q, x)
        if len(csrc):
            np.add.at(node_ell, csrc, -(cw / gamma)[:, None] * x[cdst])
        if E:
            np.add.at(nodeS, receivers, H_msg)
            np.add.at(node_ell, receivers, h_msg)
        try:
            xhat = -_batched_struct_solve(nodeS, node_ell[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise IllPosedSubproblem(str(exc)) from exc
        if E:
            S = nodeS[senders] - H_msg[rev]
            ell = node_ell[senders] - h_msg[rev]
            rhs = np.concatenate([np.broadcast_to(eye, (E, d, d)),
                                  ell[..., None]], axis=2)
            try:
                X = _batched_struct_solve(S, rhs)
            except np.linalg.LinAlgError as exc:
                raise SingularSenderCurvature(str(exc)) from exc
            H_msg = -(w_edge ** 2 / gamma ** 2)[:, None, None] * X[:, :, :d]
            h_msg = (w_edge / gamma)[:, None] * X[:, :, d]
            comm += _edge_message_cost(H_msg, d)
        comm += len(csrc)
        x_new = x + tau_node[:, None] * (xhat - x)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        trace.record(problem, x, comm, oracle)
        trace.rounds = k + 1
        if step <= config.tol_x or (config.tol_grad is not None
                                    and trace.grad_norm[-1] <= config.tol_grad):
            trace.converged = True
            break
    trace.x_final = x
    trace.monitor = (H_msg, h_msg, dir_edges)
    return trace


def _batched_struct_solve(A, rhs):
    """Batched solve that keeps exactly-diagonal batches exactly diagonal."""
    off = A - A * np.eye(A.shape[-1])
    if not np.any(off):
        diag = np.einsum("eii->ei", A)
        if np.any(diag == 0.0):
            raise np.linalg.LinAlgError("singular diagonal batch")
        return rhs / diag[..., None]
    return np.linalg.solve(A, rhs)


def _edge_message_cost(H_msg, d):
    E = H_msg.shape[0]
    if E == 0:
        return 0
    nonzero = np.any(H_msg.reshape(E, -1), axis=1)
    off = H_msg * (1.0 - np.eye(d))
    has_off = np.any(off.reshape(E, -1), axis=1)
    mat_cost = np.where(~nonzero, 0, np.where(has_off, d, 1))
    return int(mat_cost.sum()) + E


# ---------------------------------------------------------------------------
# delayed block-Jacobi reference


def delayed_block_jacobi(problem, partition, config=None, x0=None):
    """Reference delayed block-Jacobi iteration.

    For every root i in cluster r the full cluster problem is solved with
    out-of-cluster blocks frozen at delayed values: the boundary term of an
    edge (j, k), j in the cluster, reads x_k at round nu - d(i, j). The
    iterate window is initialized flat at x0. Per-root dense solves; meant
    as an oracle, not a fast path.
    """
    config = config or SolverConfig()
    if not isinstance(problem, QuadraticObjective) or problem.hyper:
        raise NotQuadratic("reference solver needs a pairwise QuadraticObjective")
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    tau_node, _ = _tau_per_node(partition, config)
    D = partition.max_diameter
    window = deque([x.copy() for _ in range(D + 1)], maxlen=D + 1)  # [0]=newest

    clusters = partition.clusters
    sub = []
    for r, c in enumerate(clusters):
        idx = {n: t for t, n in enumerate(c)}
        K = np.zeros((len(c) * d, len(c) * d))
        for t, n in enumerate(c):
            K[t * d:(t + 1) * d, t * d:(t + 1) * d] = problem.diag[n]
        for (a, b) in partition.intra_edges[r]:
            B = problem.coupling(a, b)
            K[idx[a] * d:(idx[a] + 1) * d, idx[b] * d:(idx[b] + 1) * d] += B
            K[idx[b] * d:(idx[b] + 1) * d, idx[a] * d:(idx[a] + 1) * d] += B.T
        bound = []
        for j in c:
            for kk in partition.n_out[j]:
                bound.append((j, kk, problem.coupling(j, kk)))
        sub.append((idx, K, bound))

    trace = RunTrace()
    oracle = config.track_oracle
    trace.record(problem, x, 0, oracle)
    if config.monitor:
        trace.x_history = [x.copy()]
        trace.xhat_history = []
    for k in range(config.max_rounds):
        xhat = np.zeros((m, d))
        for r, c in enumerate(clusters):
            idx, K, bound = sub[r]
            for i in c:
                rhs = problem.lin[c, :].reshape(-1).copy()
                for (j, kk, B) in bound:
                    delay = min(partition.d(i, j), D)
                    rhs[idx[j] * d:(idx[j] + 1) * d] += B @ window[delay][kk]
                try:
                    sol = np.linalg.solve(K, -rhs)
                except np.linalg.LinAlgError as exc:
                    raise IllPosedSubproblem(str(exc)) from exc
                xhat[i] = sol[idx[i] * d:(idx[i] + 1) * d]
        x_new = x + tau_node[:, None] * (xhat - x)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        window.appendleft(x.copy())
        trace.record(problem, x, 0, oracle)
        if config.monitor:
            trace.x_history.append(x.copy())
            trace.xhat_history.append(xhat.copy())
        trace.rounds = k + 1
        if step <= config.tol_x or (config.tol_grad is not None
                                    and trace.grad_norm[-1] <= config.tol_grad):
            trace.converged = True
            break
    trace.x_final = x
    return trace


def tree_solve(problem, graph):
    """Exact minimizer of a quadratic objective whose graph is a tree, via
    one leaf-to-root and one root-to-leaf message sweep.
    """
    if not isinstance(problem, QuadraticObjective) or problem.hyper:
        raise NotQuadratic("tree solver needs a pairwise QuadraticObjective")
    m, d = problem.m, problem.d
    adj = graph.adjacency()
    order = []
    parent = [-1] * m
    seen = [False] * m
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        order.append(u)
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                stack.append(v)
    if not all(seen) or len(graph.edges) != m - 1:
        raise SolverError("graph is not a tree")

    msgs = {}
    for u in reversed(order):          # leaves towards the root
        if parent[u] < 0:
            continue
        incoming = [msgs[(v, u)] for v in adj[u] if v != parent[u]]
        msgs[(u, parent[u])] = _edge_message(problem, u, parent[u], incoming)
    for u in order:                    # root towards the leaves
        for v in adj[u]:
            if v == parent[u]:
                continue
            incoming = [msgs[(w, u)] for w in adj[u] if w != v]
            msgs[(u, v)] = _edge_message(problem, u, v, incoming)

    x = np.zeros((m, d))
    for i in range(m):
        G = problem.diag[i].copy()
        g = problem.lin[i].copy()
        for v in adj[i]:
            msg = msgs[(v, i)]
            G += msg.H
            g += msg.h
        x[i] = -np.linalg.solve(G, g)
    return x


def _edge_message(problem, sender, receiver, incoming):
    from .messages import exact_quadratic_message
    return exact_quadratic_message(problem.diag[sender], problem.lin[sender],
                                   problem.coupling(receiver, sender), incoming)


# ---------------------------------------------------------------------------
# hypergraph solvers


class HyperQuadView:
    """Round view of hypergraph factors as quadratics <H_w x_w, x_w> plus
    per-node linear terms from frozen coordinates (used by the splitting
    variant; zero for plain problems). Factor indices follow the partition's
    hypergraph order.
    """

    def __init__(self, problem, factor_list):
        self.problem = problem
        self.factor_list = tuple(tuple(w) for w in factor_list)

    def quad(self, a):
        w = self.factor_list[a]
        return self.problem.hyper[w], w

    def lin(self, a, x):
        return {}

    def receiver_lin(self, a, i, x):
        return None


def pairwise_to_hyper(problem):
    """Re-express pairwise couplings as 2-node factors (<H_w x, x> blocks)."""
    hyper = dict(problem.hyper)
    for (i, j), B in problem.pair.items():
        d = problem.d
        Hw = np.zeros((2 * d, 2 * d))
        Hw[:d, d:] = 0.5 * B
        Hw[d:, :d] = 0.5 * B.T
        key = (i, j)
        hyper[key] = hyper.get(key, 0) + Hw
    return QuadraticObjective(problem.m, problem.d, problem.diag.copy(),
                              problem.lin.copy(), {}, hyper)


def h_mp_jacobi(problem, hpartition, config=None, x0=None, view=None):
    """Hypergraph message-passing Jacobi (quadratic factors).

    Per round: Jacobi-style variable updates from factor-to-variable
    messages plus frozen inter-cluster factors, then one factor-to-variable
    message round on each intra-cluster factor tree. The hosted-factor and
    factor-processor implementations produce identical iterates and differ
    only in the communication count (see ``_hyper_comm``).
    """
    config = config or SolverConfig()
    view = view or HyperQuadView(problem, hpartition.hypergraph.hyperedges)
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    p = hpartition.p
    taus = np.array([config.tau_for_cluster(r, p) for r in range(p)])
    tau_node = taus[np.array(hpartition.cluster_of)]

    keys = [(a, i) for r in range(p) for a in hpartition.intra_factors[r]
            for i in hpartition.hypergraph.hyperedges[a]]
    msgs = MessageSet(keys, d)
    surrogate_diag = (config.surrogate is not None
                      and config.surrogate.family != "exact")

    trace = RunTrace()
    comm = 0
    oracle = config.track_oracle
    trace.record(problem, x, comm, oracle)
    for k in range(config.max_rounds):
        # per-node aggregates over ALL incident terms (round-nu snapshot)
        aggH = [problem.diag[i].copy() for i in range(m)]
        aggh = [problem.lin[i].copy() for i in range(m)]
        for i in range(m):
            for a in hpartition.n_in[i]:
                msg = msgs.get((a, i))
                aggH[i] += msg.H
                aggh[i] += msg.h
            for a in hpartition.n_out[i]:
                Hw, w = view.quad(a)
                rest = [n for n in w if n != i]
                pos = {n: t for t, n in enumerate(w)}
                i0 = pos[i] * d
                aggH[i] += 2.0 * Hw[i0:i0 + d, i0:i0 + d]
                if rest:
                    ridx = np.concatenate([np.arange(pos[n] * d, (pos[n] + 1) * d)
                                           for n in rest])
                    xs = np.concatenate([x[n] for n in rest])
                    aggh[i] += 2.0 * Hw[np.ix_(np.arange(i0, i0 + d), ridx)] @ xs
                extra = view.receiver_lin(a, i, x)
                if extra is not None:
                    aggh[i] += extra
        xhat = np.zeros((m, d))
        for i in range(m):
            try:
                xhat[i] = -struct_solve(aggH[i], aggh[i])
            except np.linalg.LinAlgError as exc:
                raise IllPosedSubproblem(str(exc)) from exc

        for r in range(p):
            for a in hpartition.intra_factors[r]:
                Hw, w = view.quad(a)
                frozen = view.lin(a, x)
                for i in w:
                    aggregates = {}
                    for j in w:
                        if j == i:
                            continue
                        mj = msgs.get((a, j))
                        aggregates[j] = (aggH[j] - mj.H, aggh[j] - mj.h)
                    new = hyper_factor_message(
                        Hw, w, i, aggregates,
                        frozen_lin=frozen,
                        receiver_extra_lin=view.receiver_lin(a, i, x))
                    if surrogate_diag:
                        new = diagonalize_message(new, x[i])
                    msgs.put((a, i), new)
        comm += _hyper_comm(hpartition, msgs, config.factor_impl, d)
        msgs.commit()
        x_new = x + tau_node[:, None] * (xhat - x)
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        trace.record(problem, x, comm, oracle)
        trace.rounds = k + 1
        if step <= config.tol_x or (config.tol_grad is not None
                                    and trace.grad_norm[-1] <= config.tol_grad):
            trace.converged = True
            break
    trace.x_final = x
    trace.monitor = msgs
    return trace


def _hyper_comm(hpartition, msgs, impl, d):
    """Vectors sent in one hypergraph round.

    Hosted factors: each intra factor's non-host members send their
    variable-side aggregates to the host and receive their message back;
    the host's own exchange is local. Factor processors: all members
    exchange with the factor node. Inter-cluster factors relay iterates:
    every member ships x_i to the implementation, which returns the
    complement stack to each member.
    """
    total = 0
    hg = hpartition.hypergraph
    for r in range(hpartition.p):
        for a in hpartition.intra_factors[r]:
            w = hg.hyperedges[a]
            host = min(w)
            exchanging = [i for i in w if impl == "factor_processor" or i != host]
            # variable-side aggregates up and factor-to-variable messages
            # down, both priced like quadratic messages
            for i in exchanging:
                msg = msgs.nxt.get((a, i))
                cost = msg.vector_cost() if msg is not None else d + 1
                total += 2 * cost
    for a, w in enumerate(hg.hyperedges):
        if hpartition.factor_cluster[a] == -1:
            k = len(w)
            up = (k - 1) if impl == "hosted_factor" else k
            total += up + k * (k - 1)
    return total


def h_mp_jacobi_split(problem, split_surrogate, hpartition, config=None, x0=None):
    """Splitting variant: identical round structure on the split factor set,
    with component factors re-frozen at the newest iterates each round.
    ``split_surrogate`` is a SplitQuadraticView from the splitting module;
    ``hpartition`` partitions the split hypergraph.
    """
    return h_mp_jacobi(problem, hpartition, config=config, x0=x0,
                       view=split_surrogate)


# ---------------------------------------------------------------------------
# baselines


def baseline(kind, problem, params=None, x0=None):
    """Classical iterations used for comparison curves.

    kinds: jacobi, block_jacobi_central (needs clusters), gradient_descent
    (needs step), dgd_cta / dgd_atc (lifted consensus problems), minsum
    (plain loopy min-sum on a quadratic), minsum_splitting (consensus
    splitting recursion; see :func:`minsum_splitting`).
    Divergence is flagged on the trace, never raised, so failure curves can
    be plotted.
    """
    params = dict(params or {})
    if kind == "minsum_splitting":
        return minsum_splitting(problem, **params)
    if kind == "minsum":
        return minsum_plain(problem, **params, x0=x0)

    max_rounds = int(params.get("max_rounds", 10000))
    tol = float(params.get("tol", 1e-12))
    oracle = params.get("oracle")
    if kind in ("dgd_cta", "dgd_atc"):
        prob = problem  # a CtaProblem
        m, d = prob.m, prob.d
        x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
        W, gamma = prob.gossip.W, prob.gamma
        trace = RunTrace()
        trace.record(prob, x, 0, oracle)
        for k in range(max_rounds):
            g = np.stack([prob.locals_[i].grad((W @ x)[i] if kind == "dgd_atc" else x[i])
                          for i in range(m)])
            if kind == "dgd_cta":
                x_new = W @ x - gamma * g
            else:
                x_new = W @ (W @ x - gamma * g)
            step = float(np.max(np.abs(x_new - x)))
            x = x_new
            trace.record(prob, x, (k + 1) * 2 * len(prob.graph_edges()), oracle)
            trace.rounds = k + 1
            if step <= tol:
                trace.converged = True
                break
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
                trace.diverged = True
                break
        trace.x_final = x
        return trace

    if not isinstance(problem, QuadraticObjective):
        raise NotQuadratic(f"baseline {kind!r} needs a quadratic problem")
    m, d = problem.m, problem.d
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    trace = RunTrace()
    trace.record(problem, x, 0, oracle)
    H, b = (None, None)
    if kind in ("jacobi", "block_jacobi_central", "gradient_descent"):
        H, b = problem.assemble()
    if kind == "gradient_descent":
        step_size = params.get("step")
        if step_size is None:
            step_size = 1.0 / np.linalg.eigvalsh(H)[-1]
    tau = float(params.get("tau", 1.0))
    clusters = params.get("clusters")
    for k in range(max_rounds):
        if kind == "gradient_descent":
            x_new = x - step_size * problem.grad(x)
        elif kind == "jacobi":
            g = problem.grad(x)
            xhat = np.stack([x[i] - np.linalg.solve(problem.diag[i], g[i])
                             for i in range(m)])
            x_new = x + tau * (xhat - x)
        elif kind == "block_jacobi_central":
            xf = x.reshape(-1)
            xhat = np.zeros_like(xf)
            for c in clusters:
                idx = np.concatenate([np.arange(i * d, (i + 1) * d) for i in c])
                rest = np.setdiff1d(np.arange(m * d), idx)
                rhs = b[idx] + H[np.ix_(idx, rest)] @ xf[rest]
                xhat[idx] = np.linalg.solve(H[np.ix_(idx, idx)], -rhs)
            x_new = x + tau * (xhat.reshape(m, d) - x)
        else:
            raise SolverError(f"unknown baseline {kind!r}")
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        trace.record(problem, x, 0, oracle)
        trace.rounds = k + 1
        if step <= tol:
            trace.converged = True
            break
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1e12:
            trace.diverged = True
            break
    trace.x_final = x
    return trace


def minsum_plain(problem, max_rounds=1000, tol=1e-12, oracle=None, x0=None):
    """Plain loopy min-sum on a pairwise quadratic: exact messages on every
    directed edge of the (loopy) graph, no clusters, no damping. Diverges on
    non-walk-summable instances; the divergence flag and trace are returned.
    """
    m, d = problem.m, problem.d
    edges = sorted(problem.pair.keys())
    dir_edges = []
    for (a, b) in edges:
        dir_edges.append((a, b))
        dir_edges.append((b, a))
    nbrs = [[] for _ in range(m)]
    for (a, b) in edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    msgs = MessageSet(dir_edges, d)
    x = np.zeros((m, d)) if x0 is None else as_blocks(x0, m, d).copy()
    trace = RunTrace()
    trace.record(problem, x, 0, oracle)
    for k in range(max_rounds):
        try:
            for (s, t) in dir_edges:
                incoming = [msgs.get((u, s)) for u in nbrs[s] if u != t]
                from .messages import exact_quadratic_message
                msgs.put((s, t), exact_quadratic_message(
                    problem.diag[s], problem.lin[s],
                    problem.coupling(t, s), incoming))
            msgs.commit()
            for i in range(m):
                G = problem.diag[i].copy()
                g = problem.lin[i].copy()
                for u in nbrs[i]:
                    msg = msgs.get((u, i))
                    G += msg.H
                    g += msg.h
                x[i] = -np.linalg.solve(G, g)
        except np.linalg.LinAlgError:
            trace.diverged = True
            break
        trace.record(problem, x, (k + 1) * len(dir_edges) * (d + 1), oracle)
        trace.rounds = k + 1
        if trace.dist_to_opt and not math.isnan(trace.dist_to_opt[-1]):
            if trace.dist_to_opt[-1] > 1e9 * max(trace.dist_to_opt[0], 1.0):
                trace.diverged = True
                break
        if k > 0 and trace.grad_norm[-1] <= tol:
            trace.converged = True
            break
    trace.x_final = x
    return trace


def minsum_splitting(consensus_locals, W, delta=None, Gamma=None, gamma=None,
                     max_rounds=2000, tol=1e-12):
    """Splitting recursion for quadratic consensus: minimize
    sum_v 1/2 <H_v z, z> - <b_v, z> subject to agreement.

    The per-node quadratic message parameters evolve linearly,
        (r^s; q^s) = K(delta, Gamma) (r^{s-1}; q^{s-1}),
        (R^s; Q^s) = K(delta, Gamma) (R^{s-1}; Q^{s-1}),
    with K(delta, Gamma) = [[(1-delta)I - (1-delta)diag(Gamma 1) + delta Gamma,
    delta I], [delta I - delta diag(Gamma 1) + (1-delta) Gamma, (1-delta)I]].
    Outputs x_v^s = (R_v^s)^{-1} r_v^s converge to Hbar^{-1} bbar; with
    delta=1 and Gamma = gamma W the asymptotic factor is
        rho_K = sqrt((1 - sqrt(1 - rho_W^2)) / (1 + sqrt(1 - rho_W^2)))
    at the optimal gamma = 2 / (1 + sqrt(1 - rho_W^2)).
    """
    Hs = [np.asarray(H, dtype=float) for (H, _) in consensus_locals]
    bs = [np.asarray(b, dtype=float) for (_, b) in consensus_locals]
    n = len(Hs)
    d = bs[0].shape[0]
    W = np.asarray(W, dtype=float)
    rho_W = _rho_perp(W)
    if gamma is None:
        gamma = 2.0 / (1.0 + math.sqrt(max(1.0 - rho_W ** 2, 0.0)))
    if delta is None:
        delta = 1.0
    if Gamma is None:
        Gamma = gamma * W
    ones = np.ones(n)
    K11 = (1 - delta) * np.eye(n) - (1 - delta) * np.diag(Gamma @ ones) + delta * Gamma
    K12 = delta * np.eye(n)
    K21 = delta * np.eye(n) - delta * np.diag(Gamma @ ones) + (1 - delta) * Gamma
    K22 = (1 - delta) * np.eye(n)
    K = np.block([[K11, K12], [K21, K22]])

    Hbar = sum(Hs) / n
    bbar = sum(bs) / n
    x_star = np.linalg.solve(Hbar, bbar)

    R = np.concatenate([np.stack(Hs), np.stack(Hs)], axis=0)   # (2n, d, d)
    rv = np.concatenate([np.stack(bs), np.stack(bs)], axis=0)  # (2n, d)
    trace = RunTrace()
    x = np.zeros((n, d))
    trace.dist_to_opt.append(float(np.linalg.norm(x - x_star[None, :].repeat(n, 0))))
    trace.grad_norm.append(float("nan"))
    trace.phi_gap.append(float("nan"))
    trace.vectors_sent.append(0)
    rho_K = math.sqrt((1 - math.sqrt(max(1 - rho_W ** 2, 0.0)))
                      / (1 + math.sqrt(max(1 - rho_W ** 2, 0.0))))
    trace.monitor = {"rho_K": rho_K, "gamma": gamma, "rho_W": rho_W}
    for s in range(max_rounds):
        R = np.einsum("ab,bij->aij", K, R)
        rv = np.einsum("ab,bi->ai", K, rv)
        try:
            x = np.stack([np.linalg.solve(R[v], rv[v]) for v in range(n)])
        except np.linalg.LinAlgError:
            trace.diverged = True
            break
        err = float(np.linalg.norm(x - x_star[None, :].repeat(n, 0)))
        trace.dist_to_opt.append(err)
        trace.grad_norm.append(float("nan"))
        trace.phi_gap.append(float("nan"))
        trace.vectors_sent.append((s + 1) * 2 * int((np.abs(Gamma) > 0).sum()))
        trace.rounds = s + 1
        if err <= tol:
            trace.converged = True
            break
        if not np.isfinite(err) or err > 1e12:
            trace.diverged = True
            break
    trace.x_final = x
    return trace


def _rho_perp(W):
    n = W.shape[0]
    return float(np.max(np.abs(np.linalg.eigvals(W - np.ones((n, n)) / n))))


# ---------------------------------------------------------------------------
# stepsizes


def uniform_theorem_tau(p, D, kappa, mu_min_J=None, A_J=None):
    """tau = min{1/p, 2 kappa/(2D+1), sqrt(mu_min_J / (8 (2D+1) A_J))};
    the third cap is skipped when there is no covered coupling (A_J = 0 or
    no external-neighborhood cluster). Returns (tau, rho = 1 - tau/(2 kappa)).
    """
    terms = [1.0 / p, 2.0 * kappa / (2 * D + 1)]
    if mu_min_J is not None and A_J is not None and A_J > 0:
        terms.append(math.sqrt(mu_min_J / (8.0 * (2 * D + 1) * A_J)))
    tau = min(terms)
    return tau, 1.0 - tau / (2.0 * kappa)


def select_stepsize(partition, rate_inputs, mode="uniform_theorem",
                    manual_tau=None, surrogate=False):
    """Theorem-driven stepsize selection.

    uniform_theorem: tau = min{1/p, 2 kappa/(2D+1),
        sqrt(min_{r in J} mu_r / (8 (2D+1) A_J))}, with the surrogate
    analogue replacing (kappa, mu_r, A_J) by (kappa_t, mu_t_r,
    A_J + max_r At_r). heterogeneous_theorem returns tau_r = 1/p after
    checking the window condition; infeasibility raises InfeasibleCondition.
    manual(tau) passes tau through.
    Returns (tau, rho) where tau is a scalar (uniform/manual) or per-cluster
    array and rho the certified contraction factor.
    """
    from .rate_analysis import compute_A  # local import to avoid a cycle

    if mode == "manual":
        return float(manual_tau), None
    p = partition.p
    D = _partition_max_diam(partition)
    A_r, A_J, At_r = compute_A(partition, rate_inputs, surrogate=surrogate)
    if surrogate:
        kappa = rate_inputs.kappa_tilde
        mus = rate_inputs.mu_tilde_r
        idx = set(partition.external_cover) | {
            r for r, c in enumerate(partition.clusters) if len(c) > 1}
        denom = A_J + (max((At_r[r] for r in range(p)
                            if len(partition.clusters[r]) > 1), default=0.0))
    else:
        kappa = rate_inputs.kappa
        mus = rate_inputs.mu_r
        idx = set(partition.external_cover)
        denom = A_J
    if mode == "uniform_theorem":
        mu_min = min((mus[r] for r in idx), default=None)
        tau, rho = uniform_theorem_tau(p, D, kappa, mu_min, denom if idx else None)
        return tau, rho
    if mode == "heterogeneous_theorem":
        tau_r = np.full(p, 1.0 / p)
        # window condition with tau_r = 1/p
        lhs = 2 * D + 1
        cond1 = 2.0 * max(rate_inputs.L_r) * p / rate_inputs.mu if rate_inputs.mu > 0 else float("inf")
        if idx and A_J > 0:
            a_nu = A_J / p
            cond2 = min(mus[r] for r in idx) * p / (8.0 * a_nu)
        else:
            cond2 = float("inf")
        if lhs > min(cond1, cond2):
            raise InfeasibleCondition(
                f"2D+1={lhs} exceeds min({cond1:.3g}, {cond2:.3g}); "
                "fall back to uniform_theorem")
        rho = 1.0 - rate_inputs.mu / (2.0 * p * max(rate_inputs.L_r))
        return tau_r, rho
    raise SolverError(f"unknown stepsize mode {mode!r}")


def _partition_max_diam(partition):
    if hasattr(partition, "max_diameter"):
        return partition.max_diameter
    return partition.max_delay
