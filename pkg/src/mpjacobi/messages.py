"""Message parametrizations and every message-update rule.

All messages are quadratic forms stored up to an additive constant as a
pair (H, h) meaning mu(x) ~ 1/2 <H x, x> + <h, x>. Constants never affect
argmins, so they are dropped throughout.

Update rules implemented here:
  * exact pairwise partial minimization (quadratic objectives),
  * first-order (affine) surrogate messages,
  * structured-quadratic (Schur-recursion) surrogate messages,
  * partial-linearization messages for lifted consensus objectives,
  * hypergraph factor-to-variable messages with the variable-side
    aggregates they consume.

The linear parts of the Schur and partial-linearization recursions are
derived once from the defining partial minimizations (see the docstrings),
and are covered by brute-force minimization oracles in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MessageError(ValueError):
    pass


class SingularSenderCurvature(MessageError):
    pass


class SingularInnerMatrix(MessageError):
    pass


class SingularA(MessageError):
    pass


def is_diagonal(A, tol=0.0):
    """Exact (tol=0) or approximate diagonality of a square matrix."""
    off = A - np.diag(np.diag(A))
    if tol == 0.0:
        return not np.any(off)
    return np.max(np.abs(off)) <= tol


def struct_solve(A, rhs):
    """Solve A @ X = rhs, preserving exact zeros when A is exactly diagonal.

    Keeps diagonal message families exactly diagonal instead of merely
    numerically diagonal.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 1:
        if A[0, 0] == 0.0:
            raise np.linalg.LinAlgError("singular 1x1 system")
        return rhs / A[0, 0]
    if is_diagonal(A):
        diag = np.diag(A)
        if np.any(diag == 0.0):
            raise np.linalg.LinAlgError("singular diagonal system")
        if rhs.ndim == 1:
            return rhs / diag
        return rhs / diag[:, None]
    return np.linalg.solve(A, rhs)


@dataclass(frozen=True)
class QuadraticMessage:
    """mu(x) ~ 1/2 <H x, x> + <h, x>, H symmetric d x d."""

    H: np.ndarray
    h: np.ndarray

    @staticmethod
    def zero(d):
        return QuadraticMessage(np.zeros((d, d)), np.zeros(d))

    @property
    def d(self):
        return self.h.shape[0]

    def value(self, x):
        return float(0.5 * x @ self.H @ x + self.h @ x)

    def grad(self, x):
        return self.H @ x + self.h

    def vector_cost(self):
        """Communication size in d-vector units: matrix counts d unless it
        is diagonal (1) or identically zero (0); the linear part counts 1.
        """
        if not np.any(self.H):
            hc = 0
        elif is_diagonal(self.H):
            hc = 1
        else:
            hc = self.d
        return hc + 1


class MessageSet:
    """Double-buffered store with one message per directed incidence.

    Keys are arbitrary hashables (directed edges for pairwise runs,
    (factor, receiver) pairs for hypergraph runs). Reads during a round see
    the committed round-nu state only.
    """

    def __init__(self, keys, d):
        self.d = d
        self.cur = {k: QuadraticMessage.zero(d) for k in keys}
        self.nxt = {}

    def get(self, key):
        return self.cur[key]

    def put(self, key, msg):
        self.nxt[key] = msg

    def commit(self):
        missing = set(self.cur) - set(self.nxt)
        if missing:
            raise MessageError(f"round left {len(missing)} messages unset")
        self.cur, self.nxt = self.nxt, {}

    def keys(self):
        return self.cur.keys()

    def dump_rows(self, round_index):
        """Debug CSV rows: (round, src, dst, ||H||_F, ||h||)."""
        rows = []
        for k, msg in sorted(self.cur.items(), key=lambda kv: str(kv[0])):
            src, dst = k
            rows.append((round_index, src, dst,
                         float(np.linalg.norm(msg.H)), float(np.linalg.norm(msg.h))))
        return rows


@dataclass
class SurrogateSpec:
    """Which message/update family a solver run uses.

    families: 'exact', 'first_order' (needs alpha > 0),
    'schur_quadratic' (node curvatures Q, optional per-node M and per-edge
    cross matrices M_edge), 'partial_linearization' (node curvatures Q on a
    lifted consensus problem). References are always the latest iterates.
    """

    family: str = "exact"
    alpha: float = None
    Q: object = None            # (m,d,d) array, (d,d) shared, or scalar
    M_node: object = None       # same conventions, default zero
    M_edge: dict = field(default_factory=dict)   # (i,j) i<j -> (d,d) symmetric
    smoothness: float = None    # optional user-declared bar_L estimate

    def __post_init__(self):
        if self.family not in ("exact", "first_order", "schur_quadratic",
                               "partial_linearization"):
            raise MessageError(f"unknown surrogate family {self.family!r}")
        if self.family == "first_order":
            if self.alpha is None or self.alpha <= 0:
                raise MessageError("first_order needs alpha > 0")

    def node_matrix(self, which, i, d):
        src = self.Q if which == "Q" else self.M_node
        if src is None:
            return np.zeros((d, d)) if which == "M" else np.eye(d)
        if np.isscalar(src):
            return float(src) * np.eye(d)
        arr = np.asarray(src, dtype=float)
        if arr.ndim == 2:
            return arr
        return arr[i]

    def edge_matrix(self, i, j, d):
        key = (i, j) if i < j else (j, i)
        if key in self.M_edge:
            return np.asarray(self.M_edge[key], dtype=float)
        return np.zeros((d, d))


# ---------------------------------------------------------------------------
# pairwise update rules


def exact_quadratic_message(H_jj, b_j, B_ij, incoming, boundary_lin=None,
                            boundary_quad=None):
    """Exact min-sum message from sender j to receiver i.

    B_ij is the oriented coupling with psi(x_i, x_j) = <B_ij x_j, x_i>.
    ``incoming`` are the round-nu messages into j from its other in-cluster
    neighbors; ``boundary_lin`` aggregates B_jk @ x_k over out-of-cluster
    neighbors k; ``boundary_quad`` is an optional extra curvature at j.

    Closed form: with A_j = H_jj + sum H_in (+ boundary_quad) and
    c_j = b_j + sum h_in + boundary_lin,
        H_msg = -B_ij A_j^{-1} B_ij^T,   h_msg = -B_ij A_j^{-1} c_j.
    """
    d = b_j.shape[0]
    A = np.array(H_jj, dtype=float, copy=True)
    c = np.array(b_j, dtype=float, copy=True)
    for msg in incoming:
        A = A + msg.H
        c = c + msg.h
    if boundary_quad is not None:
        A = A + boundary_quad
    if boundary_lin is not None:
        c = c + boundary_lin
    rhs = np.concatenate([B_ij.T, c.reshape(d, 1)], axis=1)
    try:
        X = struct_solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSenderCurvature(str(exc)) from exc
    return QuadraticMessage(-B_ij @ X[:, :d], -B_ij @ X[:, d])


def first_order_message(grad_i_psi):
    """Affine message carrying the receiver-side coupling gradient at the
    current references: mu(x_i) ~ <grad_i psi_ij(x_i^nu, x_j^nu), x_i>.
    """
    g = np.asarray(grad_i_psi, dtype=float)
    return QuadraticMessage(np.zeros((g.shape[0], g.shape[0])), g.copy())


def schur_message_update(Q_j, M_j, M_i, M_ij, grad_phi_j, grad_j_psi,
                         grad_i_psi, x_j_ref, x_i_ref, incoming,
                         boundary_grad=None):
    """Structured-quadratic surrogate message j -> i.

    Curvature recursion (sender-side inner matrix S = Q_j + M_j + sum H_in):
        H_msg = M_i - M_ij S^{-1} M_ij^T.
    Linear part, derived from the same partial minimization with
    u = x_j - x_j^nu and the sender-side linear aggregate
        c_u = grad phi_j(x_j^nu) + grad_j psi_ij(ref) + sum (H_in x_j^nu + h_in)
              + sum_out grad_j psi_jk(ref):
        h_msg = grad_i psi_ij(ref) - M_ij S^{-1} c_u - H_msg x_i^ref.
    """
    S = np.array(Q_j, dtype=float, copy=True) + M_j
    c_u = (np.asarray(grad_phi_j, dtype=float)
           + np.asarray(grad_j_psi, dtype=float))
    for msg in incoming:
        S = S + msg.H
        c_u = c_u + msg.H @ x_j_ref + msg.h
    if boundary_grad is not None:
        c_u = c_u + boundary_grad
    rhs = np.concatenate([M_ij.T, c_u.reshape(-1, 1)], axis=1)
    try:
        X = struct_solve(S, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularInnerMatrix(str(exc)) from exc
    d = c_u.shape[0]
    H_msg = M_i - M_ij @ X[:, :d]
    h_msg = np.asarray(grad_i_psi, dtype=float) - M_ij @ X[:, d] - H_msg @ x_i_ref
    return QuadraticMessage(H_msg, h_msg)


def cta_partial_linearization_message(Q_i, w_ii, w_ij, gamma, grad_f_i,
                                      x_i_ref, incoming, boundary_lin=None):
    """Partial-linearization message i -> j on a lifted consensus objective.

    Curvature: H_msg = -(w_ij^2/gamma^2) S^{-1} with
        S = Q_i + ((1 - w_ii)/gamma) I + sum H_in.
    Linear part from the same minimization with the sender-side linear
    aggregate ell = grad f_i(x_i^nu) - Q_i x_i^nu + sum h_in + boundary_lin
    (boundary_lin collects -(w_ik/gamma) x_k^nu over out-neighbors):
        h_msg = (w_ij/gamma) S^{-1} ell.
    """
    d = x_i_ref.shape[0]
    S = np.array(Q_i, dtype=float, copy=True) + ((1.0 - w_ii) / gamma) * np.eye(d)
    ell = np.asarray(grad_f_i, dtype=float) - Q_i @ x_i_ref
    for msg in incoming:
        S = S + msg.H
        ell = ell + msg.h
    if boundary_lin is not None:
        ell = ell + boundary_lin
    try:
        X = struct_solve(S, np.concatenate([np.eye(d), ell.reshape(d, 1)], axis=1))
    except np.linalg.LinAlgError as exc:
        raise SingularInnerMatrix(str(exc)) from exc
    H_msg = -(w_ij ** 2 / gamma ** 2) * X[:, :d]
    h_msg = (w_ij / gamma) * X[:, d]
    return QuadraticMessage(H_msg, h_msg)


# ---------------------------------------------------------------------------
# hypergraph update rules (quadratic factors, <H_w x_w, x_w> convention)


def variable_side_aggregate(H_jj, b_j, incoming, out_factor_quads,
                            out_factor_lins, extra_lin=None):
    """Aggregate node-side cost at j as seen by one factor.

    Returns (H_agg, h_agg) in normal form 1/2 <H x,x> + <h,x> collecting the
    node term, incoming messages from the other intra factors, and the
    frozen out-of-cluster factors (their curvature 2(H_w)_{jj} and linear
    2(H_w)_{j, w\\j} x^nu terms are passed in pre-extracted).
    """
    H = np.array(H_jj, dtype=float, copy=True)
    h = np.array(b_j, dtype=float, copy=True)
    for msg in incoming:
        H = H + msg.H
        h = h + msg.h
    for Q in out_factor_quads:
        H = H + Q
    for v in out_factor_lins:
        h = h + v
    if extra_lin is not None:
        h = h + extra_lin
    return H, h


def hyper_factor_message(H_w, support, receiver, aggregates, frozen_lin=None,
                         receiver_extra_lin=None):
    """Factor-to-variable message for a quadratic factor psi = <H_w x, x>.

    ``aggregates`` maps each j in support \\ {receiver} to its variable-side
    (H_agg, h_agg). ``frozen_lin`` (optional) adds per-node linear terms from
    coordinates of a parent factor frozen by splitting; ``receiver_extra_lin``
    is the receiver-side frozen linear term 2 (H_par)_{i, frozen} y.

    Closed form (matches brute-force partial minimization):
        A     = 2 (H_w)_{rest,rest} + blockdiag(H_agg_j)
        dvec  = stacked h_agg_j (+ frozen linear terms)
        H_msg = 2 (H_w)_{ii} - 4 (H_w)_{i,rest} A^{-1} (H_w)_{rest,i}
        h_msg = receiver_extra_lin - 2 (H_w)_{i,rest} A^{-1} dvec.
    """
    support = tuple(support)
    pos = {n: t for t, n in enumerate(support)}
    d = next(iter(aggregates.values()))[1].shape[0] if aggregates else H_w.shape[0]
    rest = [n for n in support if n != receiver]
    i0 = pos[receiver] * d
    Hii = 2.0 * H_w[i0:i0 + d, i0:i0 + d]
    if not rest:
        h = np.zeros(d) if receiver_extra_lin is None else np.asarray(receiver_extra_lin)
        return QuadraticMessage(Hii, h.copy())

    ridx = np.concatenate([np.arange(pos[n] * d, (pos[n] + 1) * d) for n in rest])
    cross = 2.0 * H_w[np.ix_(np.arange(i0, i0 + d), ridx)]      # 2 (H_w)_{i,rest}
    A = 2.0 * H_w[np.ix_(ridx, ridx)]
    dvec = np.zeros(len(rest) * d)
    for t, n in enumerate(rest):
        H_agg, h_agg = aggregates[n]
        A[t * d:(t + 1) * d, t * d:(t + 1) * d] += H_agg
        dvec[t * d:(t + 1) * d] = h_agg
        if frozen_lin is not None and n in frozen_lin:
            dvec[t * d:(t + 1) * d] += frozen_lin[n]
    rhs = np.concatenate([cross.T, dvec.reshape(-1, 1)], axis=1)
    try:
        X = struct_solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularA(str(exc)) from exc
    H_msg = Hii - cross @ X[:, :d]
    h_msg = -cross @ X[:, d]
    if receiver_extra_lin is not None:
        h_msg = h_msg + receiver_extra_lin
    return QuadraticMessage(0.5 * (H_msg + H_msg.T), h_msg)


def diagonalize_message(msg, x_ref):
    """Proximal-linear compression of a message around x_ref: keep the exact
    gradient there, replace the curvature by its diagonal.
    """
    Hd = np.diag(np.diag(msg.H))
    h = msg.grad(x_ref) - Hd @ x_ref
    return QuadraticMessage(Hd, h)


def messages_to_csv(rows):
    out = ["round,src,dst,H_fro,h_norm"]
    for r in rows:
        out.append(f"{r[0]},{r[1]},{r[2]},{r[3]:.17g},{r[4]:.17g}")
    return "\n".join(out) + "\n"
