"""Convergence-theory constants, the three-term rate expression, partition
optimizers for rings and grids, and the delay-lift spectral oracle.

All constants are computed exactly for quadratic problems via dense
eigendecompositions; smooth problems must supply constants explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .objective import NotQuadratic, QuadraticObjective


class RateError(ValueError):
    pass


class MatrixTooLarge(RateError):
    pass


@dataclass
class RateInputs:
    mu: float                       # global strong convexity
    mu_r: list                      # per-cluster curvature
    L_r: list                       # per-cluster smoothness
    L_del_r: list                   # boundary cross-Lipschitz
    kappa: float                    # max_r L_r / mu
    sigma_r: list = None            # max intra-cluster degree per cluster
    # surrogate-side constants (None when no surrogate is analyzed)
    mu_tilde_r: list = None
    L_tilde_r: list = None
    L_tilde_del_r: list = None
    ell_tilde_r: list = None
    kappa_tilde: float = None
    bar_L_r: list = None
    use_deg_squared: bool = False   # alternative aggregation exponent

    def __post_init__(self):
        if self.mu < 0:
            raise RateError("mu must be nonnegative")
        for r, (m_, l_) in enumerate(zip(self.mu_r, self.L_r)):
            if m_ > l_ + 1e-9:
                raise RateError(f"cluster {r}: mu_r > L_r")


@dataclass
class RateReport:
    A_r: list
    A_J: float
    At_r: list
    term_I: float
    term_II: float
    term_III: float
    regime: str
    tau_max: float
    rho: float
    surrogate: bool = False
    extras: dict = field(default_factory=dict)

    def terms(self):
        return {"I": self.term_I, "II": self.term_II, "III": self.term_III}

    def to_dict(self):
        return {
            "A_r": list(map(float, self.A_r)),
            "A_J": float(self.A_J),
            "At_r": list(map(float, self.At_r)),
            "terms": {k: float(v) for k, v in self.terms().items()},
            "regime": self.regime,
            "tau_max": float(self.tau_max),
            "rho": float(self.rho),
            "surrogate": self.surrogate,
        }


def _spectral_norm(A):
    if A.size == 0:
        return 0.0
    return float(np.linalg.norm(A, 2))


def _block_indices(cluster, d):
    return np.concatenate([np.arange(i * d, (i + 1) * d) for i in cluster])


def estimate_constants(problem, partition, surrogate=None, cta=None):
    """Exact curvature/smoothness constants of a quadratic problem under a
    tree partition; optionally also the constants of a surrogate family.

    mu = lambda_min(H); per cluster r: L_r, mu_r are the extreme eigenvalues
    of H_{C_r,C_r} and L_del_r = ||H_{C_r, N_{C_r}}||_2. Surrogate constants
    come from the aggregated cluster surrogates of the requested family
    (first_order, schur_quadratic, partial_linearization), which are
    themselves quadratic, so everything is an eigenvalue computation.
    """
    if not isinstance(problem, QuadraticObjective):
        raise NotQuadratic("estimate_constants needs a quadratic problem "
                           "(declare constants manually for smooth ones)")
    d = problem.d
    H, _ = problem.assemble()
    vals_all = np.linalg.eigvalsh(H)
    mu = float(vals_all[0])
    scale = max(abs(vals_all[-1]), 1.0)
    if -1e-10 * scale < mu < 0:
        mu = 0.0   # numerically PSD
    mu_r, L_r, L_del_r, sigma_r = [], [], [], []
    for r, c in enumerate(partition.clusters):
        idx = _block_indices(c, d)
        blk = H[np.ix_(idx, idx)]
        vals = np.linalg.eigvalsh(blk)
        mu_r.append(float(vals[0]))
        L_r.append(float(vals[-1]))
        ext = sorted(partition.cluster_ext[r])
        if ext:
            eidx = _block_indices(ext, d)
            L_del_r.append(_spectral_norm(H[np.ix_(idx, eidx)]))
        else:
            L_del_r.append(0.0)
        deg = max((len(partition.n_in[i]) for i in c), default=0)
        sigma_r.append(max(deg, 1) if len(c) > 1 else 1)
    kappa = max(L_r) / mu if mu > 0 else float("inf")
    inputs = RateInputs(mu=mu, mu_r=mu_r, L_r=L_r, L_del_r=L_del_r,
                        kappa=kappa, sigma_r=sigma_r)
    if surrogate is not None:
        _fill_surrogate_constants(inputs, problem, partition, surrogate, cta)
    return inputs


def _fill_surrogate_constants(inputs, problem, partition, spec, cta):
    d = problem.d
    m = problem.m
    fam = spec.family
    mu_t, L_t, Ldel_t, ell_t, barL = [], [], [], [], []
    for r, c in enumerate(partition.clusters):
        pos = {n: t for t, n in enumerate(c)}
        n = len(c) * d
        K = np.zeros((n, n))
        for i in c:
            K[pos[i] * d:(pos[i] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += (
                _node_surrogate_curvature(problem, spec, cta, i, fam))
        intra = sorted(partition.intra_edges[r])
        for (i, j) in intra:
            Ki, Kj, Kij = _edge_surrogate_curvature(problem, spec, cta, i, j, fam)
            K[pos[i] * d:(pos[i] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += Ki
            K[pos[j] * d:(pos[j] + 1) * d, pos[j] * d:(pos[j] + 1) * d] += Kj
            K[pos[i] * d:(pos[i] + 1) * d, pos[j] * d:(pos[j] + 1) * d] += Kij
            K[pos[j] * d:(pos[j] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += Kij.T
        for i in c:
            for k in partition.n_out[i]:
                Ki, _, _ = _edge_surrogate_curvature(problem, spec, cta, i, k, fam)
                K[pos[i] * d:(pos[i] + 1) * d, pos[i] * d:(pos[i] + 1) * d] += Ki
        vals = np.linalg.eigvalsh(K) if n else np.array([0.0])
        mu_t.append(float(vals[0]))
        L_t.append(float(vals[-1]))

        # sensitivity to the intra-cluster edge-reference stack
        if intra:
            J = np.zeros((n, 2 * len(intra) * d))
            for e, (i, j) in enumerate(intra):
                Jii, Jij, Jji, Jjj = _edge_ref_jacobian(problem, spec, cta, i, j, fam)
                c0 = 2 * e * d
                J[pos[i] * d:(pos[i] + 1) * d, c0:c0 + d] += Jii
                J[pos[i] * d:(pos[i] + 1) * d, c0 + d:c0 + 2 * d] += Jij
                J[pos[j] * d:(pos[j] + 1) * d, c0:c0 + d] += Jji
                J[pos[j] * d:(pos[j] + 1) * d, c0 + d:c0 + 2 * d] += Jjj
            ell_t.append(_spectral_norm(J))
        else:
            ell_t.append(0.0)

        ext = sorted(partition.cluster_ext[r])
        if ext:
            Jb = np.zeros((n, len(ext) * d))
            epos = {k: t for t, k in enumerate(ext)}
            for i in c:
                for k in partition.n_out[i]:
                    Jb[pos[i] * d:(pos[i] + 1) * d,
                       epos[k] * d:(epos[k] + 1) * d] += (
                        _boundary_jacobian(problem, spec, cta, i, k, fam))
            Ldel_t.append(_spectral_norm(Jb))
        else:
            Ldel_t.append(0.0)
        barL.append(_bar_L(problem, partition, spec, cta, r, fam))
    inputs.mu_tilde_r = mu_t
    inputs.L_tilde_r = L_t
    inputs.L_tilde_del_r = Ldel_t
    inputs.ell_tilde_r = ell_t
    inputs.bar_L_r = barL
    inputs.kappa_tilde = max(L_t) / inputs.mu if inputs.mu > 0 else float("inf")


def _node_surrogate_curvature(problem, spec, cta, i, fam):
    d = problem.d
    if fam == "first_order":
        return np.eye(d) / spec.alpha
    if fam == "schur_quadratic":
        return spec.node_matrix("Q", i, d)
    if fam == "partial_linearization":
        W, g = cta.gossip.W, cta.gamma
        return spec.node_matrix("Q", i, d) + (1.0 - W[i, i]) / g * np.eye(d)
    raise RateError(f"no surrogate constants for family {fam!r}")


def _edge_surrogate_curvature(problem, spec, cta, i, j, fam):
    d = problem.d
    Z = np.zeros((d, d))
    if fam == "first_order":
        return Z, Z, Z
    if fam == "schur_quadratic":
        return (spec.node_matrix("M", i, d), spec.node_matrix("M", j, d),
                spec.edge_matrix(i, j, d) if i < j else spec.edge_matrix(i, j, d).T)
    if fam == "partial_linearization":
        W, g = cta.gossip.W, cta.gamma
        return Z, Z, -(W[i, j] / g) * np.eye(d)
    raise RateError(fam)


def _coupling(problem, cta, i, j):
    if isinstance(problem, QuadraticObjective):
        return problem.coupling(i, j)
    W, g = cta.gossip.W, cta.gamma
    return -(W[i, j] / g) * np.eye(problem.d)


def _edge_ref_jacobian(problem, spec, cta, i, j, fam):
    """d(grad_i, grad_j) / d(y_i, y_j) for the edge surrogate of (i, j)."""
    d = problem.d
    B = _coupling(problem, cta, i, j)
    Z = np.zeros((d, d))
    if fam == "first_order":
        return Z, B, B.T, Z
    if fam == "schur_quadratic":
        Mi = spec.node_matrix("M", i, d)
        Mj = spec.node_matrix("M", j, d)
        Mij = spec.edge_matrix(i, j, d)
        return -Mi, B - Mij, B.T - Mij.T, -Mj
    if fam == "partial_linearization":
        return Z, Z, Z, Z  # couplings kept exact: no edge references
    raise RateError(fam)


def _boundary_jacobian(problem, spec, cta, i, k, fam):
    """d grad_i / d x_k for the cross-cluster surrogate term of (i, k)."""
    return _coupling(problem, cta, i, k)


def _bar_L(problem, partition, spec, cta, r, fam):
    """Smoothness of the full aggregated surrogate over (x, zeta_r),
    assembled exactly for quadratic families.
    """
    d = problem.d
    m = problem.m
    c = partition.clusters[r]
    intra = sorted(partition.intra_edges[r])
    pos_x = {i: i for i in range(m)}
    nv = m + len(c) + m + 2 * len(intra)   # x, y_C, y_all (outside refs), y_E
    N = nv * d
    Hs = np.zeros((N, N))

    def sl(block):
        return np.arange(block * d, (block + 1) * d)

    off_yc = m
    pos_yc = {i: off_yc + t for t, i in enumerate(c)}
    off_yo = m + len(c)
    off_ye = off_yo + m

    def add(bi, bj, blk):
        Hs[np.ix_(sl(bi), sl(bj))] += blk
        if bi != bj:
            Hs[np.ix_(sl(bj), sl(bi))] += blk.T

    cset = set(c)
    # node surrogates
    for i in c:
        Q = _node_surrogate_curvature(problem, spec, cta, i, fam)
        add(pos_x[i], pos_x[i], Q)
        if fam == "first_order" or fam == "schur_quadratic":
            Hii = problem.diag[i]
            add(pos_x[i], pos_yc[i], Hii - Q)   # grad phi(y) - Q y cross term
            add(pos_yc[i], pos_yc[i], Q - Hii)  # curvature in the reference
    # intra edges
    for e, (i, j) in enumerate(intra):
        Ki, Kj, Kij = _edge_surrogate_curvature(problem, spec, cta, i, j, fam)
        add(pos_x[i], pos_x[i], Ki)
        add(pos_x[j], pos_x[j], Kj)
        add(pos_x[i], pos_x[j], Kij)
        Jii, Jij, Jji, Jjj = _edge_ref_jacobian(problem, spec, cta, i, j, fam)
        ye_i = off_ye + 2 * e
        ye_j = off_ye + 2 * e + 1
        add(pos_x[i], ye_i, Jii)
        add(pos_x[i], ye_j, Jij)
        add(pos_x[j], ye_i, Jji)
        add(pos_x[j], ye_j, Jjj)
    # cross-cluster edges and the remainder over outside nodes
    for i in range(m):
        if i in cset:
            for k in partition.n_out[i]:
                B = _coupling(problem, cta, i, k)
                add(pos_x[i], pos_x[k], B)
        else:
            add(pos_x[i], pos_x[i], problem.diag[i])
            for j in partition.graph.adjacency()[i]:
                if j not in cset and i < j:
                    add(pos_x[i], pos_x[j], _coupling(problem, cta, i, j))
    return _spectral_norm(Hs)


def compute_A(partition, inputs, surrogate=False):
    """Per-cluster delay-aggregation constants and the covered maximum.

    A_r = (2 L_r + mu_r) L_del_r^2 |C_r| D_r / (4 mu_r^2)  (0 for singletons)
    A_J = max over covered nodes i of the sum of A_r over non-singleton
    clusters whose external neighborhood contains i.
    At_r is the edge-reference analogue with ell_tilde and the max
    intra-cluster degree (squared when ``use_deg_squared``).
    """
    p = partition.p
    if surrogate:
        mus = inputs.mu_tilde_r
        Ls = inputs.L_tilde_r
        Ldels = inputs.L_tilde_del_r
    else:
        mus = inputs.mu_r
        Ls = inputs.L_r
        Ldels = inputs.L_del_r
    A_r = []
    for r, c in enumerate(partition.clusters):
        if len(c) <= 1:
            A_r.append(0.0)
            continue
        Dr = partition.diameters[r]
        if mus[r] <= 0:
            A_r.append(float("inf"))
            continue
        A_r.append((2 * Ls[r] + mus[r]) * Ldels[r] ** 2 * len(c) * Dr
                   / (4 * mus[r] ** 2))
    covered = set()
    for r, c in enumerate(partition.clusters):
        if len(c) > 1:
            covered |= set(partition.cluster_ext[r])
    A_J = 0.0
    for i in covered:
        tot = sum(A_r[r] for r, c in enumerate(partition.clusters)
                  if len(c) > 1 and i in partition.cluster_ext[r])
        A_J = max(A_J, tot)
    At_r = [0.0] * p
    if surrogate and inputs.ell_tilde_r is not None:
        for r, c in enumerate(partition.clusters):
            if len(c) <= 1 or inputs.mu_tilde_r[r] <= 0:
                continue
            Dr = partition.diameters[r]
            deg = inputs.sigma_r[r]
            degf = deg ** 2 if inputs.use_deg_squared else deg
            At_r[r] = ((2 * inputs.L_tilde_r[r] + inputs.mu_tilde_r[r])
                       * inputs.ell_tilde_r[r] ** 2 * len(c) * Dr * degf
                       / (4 * inputs.mu_tilde_r[r] ** 2))
    return A_r, A_J, At_r


def rate_terms(partition, inputs, surrogate=False):
    """Three-term stepsize bound and the implied contraction factor.

    I = 1/p, II = 2 kappa / (2D+1),
    III = sqrt(min_{r in J} mu_r / (8 (2D+1) A_J)); the minimum picks the
    active regime and rho = 1 - tau_max / (2 kappa). Term III is +inf when
    no non-singleton cluster has external neighbors.
    """
    p = partition.p
    D = partition.max_diameter
    A_r, A_J, At_r = compute_A(partition, inputs, surrogate=surrogate)
    kappa = inputs.kappa_tilde if surrogate else inputs.kappa
    if kappa <= 0 or p < 1:
        raise RateError("need kappa > 0 and p >= 1")
    term_I = 1.0 / p
    term_II = 2.0 * kappa / (2 * D + 1)
    J = partition.external_cover
    if surrogate:
        idx = set(J) | {r for r, c in enumerate(partition.clusters) if len(c) > 1}
        mus = inputs.mu_tilde_r
        denom = A_J + max((At_r[r] for r, c in enumerate(partition.clusters)
                           if len(c) > 1), default=0.0)
    else:
        idx = set(J)
        mus = inputs.mu_r
        denom = A_J
    if idx and denom > 0:
        term_III = math.sqrt(min(mus[r] for r in idx) / (8 * (2 * D + 1) * denom))
    else:
        term_III = float("inf")
    tau_max = min(term_I, term_II, term_III)
    regime = {term_I: "I", term_II: "II", term_III: "III"}[tau_max]
    rho = 1.0 - tau_max / (2.0 * kappa)
    return RateReport(A_r=A_r, A_J=A_J, At_r=At_r, term_I=term_I,
                      term_II=term_II, term_III=term_III, regime=regime,
                      tau_max=tau_max, rho=rho, surrogate=surrogate)


# ---------------------------------------------------------------------------
# parametric partition optimizers (constants treated as size-independent
# templates, as in the asymptotic analysis)


@dataclass
class ConstantsTemplate:
    mu: float = 1.0
    mu_cluster: float = 1.0
    L_cluster: float = 2.0
    L_boundary: float = 1.0
    kappa: float = None

    def resolved_kappa(self):
        return self.kappa if self.kappa is not None else self.L_cluster / self.mu


def _three_terms_ring(m, D, strategy, t):
    kappa = t.resolved_kappa()
    A1 = (2 * t.L_cluster + t.mu_cluster) * t.L_boundary ** 2 * (D + 1) * D \
        / (4 * t.mu_cluster ** 2)
    if strategy == "P1":
        p = m - D
    else:
        p = m // (D + 1)
    I = 1.0 / p
    II = 2.0 * kappa / (2 * D + 1)
    III = math.sqrt(t.mu_cluster / (8 * (2 * D + 1) * A1)) if D >= 1 else float("inf")
    return I, II, III, p


def ring_partition_optimizer(m, strategy, template=None):
    """Best diameter for the two ring partition families.

    P1: one path of diameter D plus singletons (p = m - D).
    P2: equal paths of D+1 nodes ((D+1) | m, p = m/(D+1)).
    Exhaustive search over D maximizing min{I, II, III}; returns
    (D_star, p_star, fitted_scaling_exponent) where the exponent is the
    log-log slope of (1 - rho)^{-1} at the per-size optimizer over a
    doubling ladder starting at m.
    """
    t = template or ConstantsTemplate()
    if strategy not in ("P1", "P2"):
        raise RateError("strategy must be P1 or P2")

    def best_for(mm):
        best = None
        cands = range(1, mm - 1) if strategy == "P1" else \
            [Dp - 1 for Dp in range(2, mm + 1) if mm % Dp == 0 and Dp < mm]
        for D in cands:
            I, II, III, p = _three_terms_ring(mm, D, strategy, t)
            val = min(I, II, III)
            if best is None or val > best[0]:
                best = (val, D, p)
        if best is None:   # degenerate small m
            return (1.0, 0, 1)
        return best

    val, D_star, p_star = best_for(m)
    sizes, inv_margins = [], []
    mm = m
    for _ in range(6):
        v, _, _ = best_for(mm)
        sizes.append(mm)
        inv_margins.append(1.0 / v)
        mm *= 2
    slope, _ = fit_loglog(sizes, inv_margins)
    return D_star, p_star, slope


def grid_partition_optimizer(m, template=None):
    """Horizontal-path family on a sqrt(m) x sqrt(m) grid: clusters are the
    first D+1 nodes of each row plus singletons (p = m - D sqrt(m)).
    Exhaustive over D in [1, sqrt(m)-1]; A_J uses the two-row adjacency
    bound (a covered node sees at most two row clusters).
    """
    t = template or ConstantsTemplate()
    s = int(round(math.sqrt(m)))
    if s * s != m:
        raise RateError("grid optimizer needs a perfect square m")
    kappa = t.resolved_kappa()

    def value(mm, ss, D):
        p = mm - D * ss
        A1 = (2 * t.L_cluster + t.mu_cluster) * t.L_boundary ** 2 * (D + 1) * D \
            / (4 * t.mu_cluster ** 2)
        A_J = (2 if D <= ss - 2 else 2) * A1
        I = 1.0 / p
        II = 2.0 * kappa / (2 * D + 1)
        III = math.sqrt(t.mu_cluster / (8 * (2 * D + 1) * A_J))
        return min(I, II, III), p

    def best_for(mm):
        ss = int(round(math.sqrt(mm)))
        best = None
        for D in range(1, ss):
            val, p = value(mm, ss, D)
            if best is None or val > best[0]:
                best = (val, D, p)
        return best

    val, D_star, p_star = best_for(m)
    sizes, inv_margins = [], []
    ss = s
    for _ in range(6):
        v, _, _ = best_for(ss * ss)
        sizes.append(ss * ss)
        inv_margins.append(1.0 / v)
        ss *= 2
    slope, _ = fit_loglog(sizes, inv_margins)
    return D_star, p_star, slope


def fit_loglog(xs, ys):
    """Least-squares slope of log y against log x, with the fit residual."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(res[0]) if len(res) else 0.0
    return float(coef[0]), resid


# ---------------------------------------------------------------------------
# delay-lift spectral oracle


def spectral_rate_oracle(problem, partition, tau, cap=5000):
    """Exact asymptotic factor of the damped delayed block-Jacobi iteration
    on a quadratic problem: spectral radius of the (D+1)md companion matrix
    whose first block row splits the block-Jacobi operator by delay class.

    Requires the single-gateway condition (delay classes must be disjoint).
    For PSD-singular Hessians the fixed space (constant lifts of the null
    space) is excluded from the radius.
    """
    if not partition.nonoverlap_ok:
        raise RateError("spectral oracle requires the single-gateway condition")
    d = problem.d
    m = problem.m
    D = partition.max_diameter
    n = m * d
    if (D + 1) * n > cap:
        raise MatrixTooLarge(f"(D+1)*m*d = {(D + 1) * n} exceeds cap {cap}")
    H, _ = problem.assemble()
    T = np.zeros((n, n))
    for r, c in enumerate(partition.clusters):
        idx = _block_indices(c, d)
        rest = np.setdiff1d(np.arange(n), idx)
        T[np.ix_(idx, rest)] = -np.linalg.solve(H[np.ix_(idx, idx)],
                                                H[np.ix_(idx, rest)])
    # delay class of each (i, j) block with a nonzero T block
    Tparts = [np.zeros((n, n)) for _ in range(D + 1)]
    for r, c in enumerate(partition.clusters):
        for i in c:
            for k in partition.cluster_ext[r]:
                gw = partition.gateway(r, k)[0]
                delay = partition.d(i, gw)
                bi = np.arange(i * d, (i + 1) * d)
                bk = np.arange(k * d, (k + 1) * d)
                Tparts[delay][np.ix_(bi, bk)] = T[np.ix_(bi, bk)]
    M = np.zeros(((D + 1) * n, (D + 1) * n))
    M[:n, :n] = (1.0 - tau) * np.eye(n) + tau * Tparts[0]
    for delta in range(1, D + 1):
        M[:n, delta * n:(delta + 1) * n] = tau * Tparts[delta]
        M[delta * n:(delta + 1) * n, (delta - 1) * n:delta * n] = np.eye(n)
    eig = np.linalg.eigvals(M)
    vals = np.linalg.eigvalsh(H)
    nullity = int(np.sum(vals < 1e-10 * max(abs(vals[-1]), 1.0)))
    mags = np.sort(np.abs(eig))[::-1]
    if nullity:
        keep = [v for v in np.abs(eig) if abs(v - 1.0) > 1e-9]
        dropped = len(eig) - len(keep)
        if dropped < nullity:
            keep = sorted(np.abs(eig))[: len(eig) - nullity]
        return float(max(keep))
    return float(mags[0])
