"""Executable checks: equivalence, descent, surrogate regularity, split
consistency, and the sublinear-rate certificates.

Every check returns a CheckReport and is deterministic under its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .messages import SurrogateSpec
from .objective import CtaProblem, QuadraticObjective, global_solve_oracle
from .rate_analysis import compute_A, estimate_constants
from .solvers import SolverConfig, delayed_block_jacobi, mp_jacobi, mp_jacobi_surrogate


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    tolerance: float
    witness: dict = field(default_factory=dict)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        return (f"{self.name}: {status} (worst violation {self.worst_violation:.3e},"
                f" tol {self.tolerance:.1e})")

    def to_json(self):
        import json

        return json.dumps({
            "check": self.name,
            "passed": bool(self.passed),
            "worst_violation": float(self.worst_violation),
            "tolerance": float(self.tolerance),
            "witness": {str(k): (v if isinstance(v, (int, float, str)) else str(v))
                        for k, v in self.witness.items()},
        })


def finite_diff_grad(f, x, h=None):
    """Central differences; step 1e-5 (1 + ||x||_inf)."""
    x = np.asarray(x, dtype=float)
    if h is None:
        h = 1e-5 * (1.0 + float(np.max(np.abs(x))) if x.size else 1.0)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h
        gf[k] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g


def check_gradient(problem, points=10, seed=0, rel_tol=1e-6):
    """Analytic gradients against central differences at random points."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    wit = {}
    for t in range(points):
        x = rng.standard_normal((problem.m, problem.d))
        g = problem.grad(x)
        gf = finite_diff_grad(problem.value, x)
        err = np.linalg.norm(g - gf) / (1.0 + np.linalg.norm(gf))
        if err > worst:
            worst = err
            wit = {"point": t}
    return CheckReport("gradient_fd", worst <= rel_tol, float(worst), rel_tol, wit)


# ---------------------------------------------------------------------------
# equivalence of the message solver and the delayed reference


def check_equivalence_prop31(problem, partition, seeds=(0,), rounds=30,
                             tol=1e-10, tau=None):
    """Per-round sup-norm gap between the exact message solver (warm-started
    messages, matching the flat-window initialization of the reference) and
    the delayed block-Jacobi reference. Skipped with a warning witness when
    the single-gateway condition fails (precondition of the compact form).
    """
    if not partition.nonoverlap_ok:
        return CheckReport("prop31_equivalence", True, 0.0, tol,
                           {"skipped": "single-gateway condition violated"})
    if tau is None:
        tau = 1.0 / partition.p
    worst = 0.0
    wit = {}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal((problem.m, problem.d))
        cfg_a = SolverConfig(tau=tau, max_rounds=rounds, tol_x=0.0,
                             message_init="warm_start", monitor=True)
        cfg_b = SolverConfig(tau=tau, max_rounds=rounds, tol_x=0.0, monitor=True)
        ta = mp_jacobi(problem, partition, cfg_a, x0=x0)
        tb = delayed_block_jacobi(problem, partition, cfg_b, x0=x0)
        for k, (xa, xb) in enumerate(zip(ta.x_history, tb.x_history)):
            gap = float(np.max(np.abs(xa - xb)))
            if gap > worst:
                worst = gap
                wit = {"seed": seed, "round": k}
    return CheckReport("prop31_equivalence", worst <= tol, worst, tol, wit)


# ---------------------------------------------------------------------------
# descent and delay-gap monitors


def _cluster_norm_sq(x, cluster):
    return float(np.sum(x[list(cluster)] ** 2))


def check_descent_lemmas(problem, partition, rounds=25, tau=None, x0=None,
                         seed=0, tol=1e-9):
    """Evaluate the three per-round inequalities the linear-rate proof runs on:

    (a) descent:   Phi(x+) <= Phi(x) + sum_r tau_r [ -||P_r grad Phi(x)||^2/(2 L_r)
                                + (L_r/2) ||P_r (xhat - xbar)||^2 ]
    (b) sufficient decrease:  Phi(x+) <= Phi(x) + sum_r tau_r [
             -(mu_r/4)||P_r(xhat - x)||^2 + ((L_r+mu_r)/2)||P_r(xbar - xhat)||^2 ]
    (c) delay gap: ||P_r(xhat - xbar)||^2 <= (L_del_r^2 |C_r| D_r / mu_r^2)
                    * sum over the last D_r rounds of ||P_del_r increment||^2.

    The run is warm-started so the message iterates coincide with the
    delayed block-Jacobi form the lemmas are stated for.
    """
    p = partition.p
    if tau is None:
        tau = 1.0 / p
    if tau * p > 1.0 + 1e-12:
        raise ValueError("stepsize schedule violates sum_r tau_r <= 1")
    inputs = estimate_constants(problem, partition)
    rng = np.random.default_rng(seed)
    if x0 is None:
        x0 = rng.standard_normal((problem.m, problem.d))
    cfg = SolverConfig(tau=tau, max_rounds=rounds, tol_x=0.0,
                       message_init="warm_start", monitor=True)
    tr = mp_jacobi(problem, partition, cfg, x0=x0)

    H, b = problem.assemble()
    d = problem.d
    m = problem.m
    worst = 0.0
    wit = {}
    xs = tr.x_history
    for k in range(len(tr.xhat_history)):
        x = xs[k]
        x_next = xs[k + 1]
        xhat = tr.xhat_history[k]
        xbar = np.zeros_like(x)
        xf = x.reshape(-1)
        for r, c in enumerate(partition.clusters):
            idx = np.concatenate([np.arange(i * d, (i + 1) * d) for i in c])
            rest = np.setdiff1d(np.arange(m * d), idx)
            rhs = b[idx] + H[np.ix_(idx, rest)] @ xf[rest]
            sol = np.linalg.solve(H[np.ix_(idx, idx)], -rhs)
            for t, i in enumerate(c):
                xbar[i] = sol[t * d:(t + 1) * d]
        phi_x = problem.value(x)
        phi_next = problem.value(x_next)
        grad = problem.grad(x)
        rhs_a = rhs_b = phi_x
        for r, c in enumerate(partition.clusters):
            ga = _cluster_norm_sq(grad, c)
            gap = _cluster_norm_sq(xhat - xbar, c)
            move = _cluster_norm_sq(xhat - x, c)
            rhs_a += tau * (-ga / (2 * inputs.L_r[r]) + inputs.L_r[r] / 2 * gap)
            rhs_b += tau * (-inputs.mu_r[r] / 4 * move
                            + (inputs.L_r[r] + inputs.mu_r[r]) / 2 * gap)
            if len(c) > 1:
                Dr = partition.diameters[r]
                ext = sorted(partition.cluster_ext[r])
                acc = 0.0
                for ell in range(max(k - Dr, 0), k):
                    acc += _cluster_norm_sq(xs[ell + 1] - xs[ell], ext)
                bound = (inputs.L_del_r[r] ** 2 * len(c) * Dr
                         / inputs.mu_r[r] ** 2) * acc
                viol = gap - bound
                if viol > worst:
                    worst = viol
                    wit = {"inequality": "delay_gap", "round": k, "cluster": r}
        for name, rhs in (("descent", rhs_a), ("sufficient_decrease", rhs_b)):
            viol = phi_next - rhs
            if viol > worst:
                worst = viol
                wit = {"inequality": name, "round": k}
    return CheckReport("descent_lemmas", worst <= tol, float(worst), tol, wit)


# ---------------------------------------------------------------------------
# surrogate evaluators and regularity checks


class SurrogateEvaluator:
    """Value/gradient of the aggregated cluster surrogate at arbitrary
    reference tuples zeta_r = (y_cluster, y_outside, y_edges).
    """

    def __init__(self, problem, partition, spec, cta=None):
        self.problem = problem
        self.partition = partition
        self.spec = spec
        self.cta = cta
        self.d = problem.d

    # local pieces -----------------------------------------------------

    def _phi(self, i, x):
        if isinstance(self.problem, QuadraticObjective):
            return (0.5 * x @ self.problem.diag[i] @ x
                    + self.problem.lin[i] @ x)
        return self.problem.phi[i][0](x)

    def _phi_grad(self, i, x):
        if isinstance(self.problem, QuadraticObjective):
            return self.problem.diag[i] @ x + self.problem.lin[i]
        return np.asarray(self.problem.phi[i][1](x), dtype=float)

    def _psi(self, i, j, u, v):
        if isinstance(self.problem, QuadraticObjective):
            return float(u @ self.problem.coupling(i, j) @ v)
        return self.problem.pair_value(i, j, u, v)

    def _psi_grad_i(self, i, j, u, v):
        if isinstance(self.problem, QuadraticObjective):
            return self.problem.coupling(i, j) @ v
        return self.problem.pair_grad_first(i, j, u, v)

    def tilde_phi(self, i, x, y):
        fam = self.spec.family
        if fam == "exact":
            return self._phi(i, x)
        if fam == "first_order":
            return (self._phi(i, y) + self._phi_grad(i, y) @ (x - y)
                    + 0.5 / self.spec.alpha * float((x - y) @ (x - y)))
        if fam == "schur_quadratic":
            Q = self.spec.node_matrix("Q", i, self.d)
            return (self._phi(i, y) + self._phi_grad(i, y) @ (x - y)
                    + 0.5 * (x - y) @ Q @ (x - y))
        if fam == "partial_linearization":
            W, g = self.cta.gossip.W, self.cta.gamma
            Q = self.spec.node_matrix("Q", i, self.d)
            f = self.cta.locals_[i]
            return (f.value(y) + f.grad(y) @ (x - y)
                    + 0.5 * (x - y) @ Q @ (x - y)
                    + (1 - W[i, i]) / (2 * g) * float(x @ x))
        raise ValueError(fam)

    def tilde_psi(self, i, j, u, v, yu, yv):
        fam = self.spec.family
        if fam == "exact" or fam == "partial_linearization":
            return self._psi(i, j, u, v)
        if fam == "first_order":
            return (self._psi(i, j, yu, yv)
                    + self._psi_grad_i(i, j, yu, yv) @ (u - yu)
                    + self._psi_grad_i(j, i, yv, yu) @ (v - yv))
        if fam == "schur_quadratic":
            Mi = self.spec.node_matrix("M", i, self.d)
            Mj = self.spec.node_matrix("M", j, self.d)
            Mij = self.spec.edge_matrix(i, j, self.d)
            if i > j:
                Mij = Mij.T
            return (self._psi(i, j, yu, yv)
                    + self._psi_grad_i(i, j, yu, yv) @ (u - yu)
                    + self._psi_grad_i(j, i, yv, yu) @ (v - yv)
                    + float((u - yu) @ Mij @ (v - yv))
                    + 0.5 * (u - yu) @ Mi @ (u - yu)
                    + 0.5 * (v - yv) @ Mj @ (v - yv))
        raise ValueError(fam)

    # aggregates ---------------------------------------------------------

    def phi_r(self, r, x):
        """Cluster-relevant portion of the true objective."""
        part = self.partition
        c = part.clusters[r]
        val = sum(self._phi(i, x[i]) for i in c)
        for (i, j) in part.intra_edges[r]:
            val += self._psi(i, j, x[i], x[j])
        for i in c:
            for k in part.n_out[i]:
                val += self._psi(i, k, x[i], x[k])
        return float(val)

    def tilde_phi_r(self, r, x, y_cluster, y_out, y_edges):
        part = self.partition
        c = part.clusters[r]
        val = sum(self.tilde_phi(i, x[i], y_cluster[i]) for i in c)
        for (i, j) in sorted(part.intra_edges[r]):
            yu, yv = y_edges[(i, j)]
            val += self.tilde_psi(i, j, x[i], x[j], yu, yv)
        for i in c:
            for k in part.n_out[i]:
                val += self.tilde_psi(i, k, x[i], x[k], y_cluster[i], y_out[k])
        return float(val)

    def tilde_phi_r_grad_cluster(self, r, x, y_cluster, y_out, y_edges,
                                 h=1e-6):
        part = self.partition
        c = part.clusters[r]
        g = np.zeros((len(c), self.d))
        for t, i in enumerate(c):
            for k in range(self.d):
                xp = x.copy()
                xp[i, k] += h
                xm = x.copy()
                xm[i, k] -= h
                g[t, k] = (self.tilde_phi_r(r, xp, y_cluster, y_out, y_edges)
                           - self.tilde_phi_r(r, xm, y_cluster, y_out, y_edges)) / (2 * h)
        return g

    def consistent_refs(self, r, x):
        part = self.partition
        y_cluster = {i: x[i].copy() for i in part.clusters[r]}
        y_out = {k: x[k].copy() for i in part.clusters[r]
                 for k in part.n_out[i]}
        y_edges = {(i, j): (x[i].copy(), x[j].copy())
                   for (i, j) in part.intra_edges[r]}
        return y_cluster, y_out, y_edges


def check_surrogate_regularity(problem, partition, spec, cta=None,
                               samples=100, seed=0, tol_consistency=1e-8,
                               tol_major=1e-9):
    """Numerical audit of the cluster-surrogate conditions.

    (i) gradient consistency at consistent references (finite differences),
    (ii) majorization Phi_r <= tilde Phi_r at sampled (x, zeta) pairs,
    (iii) positive surrogate curvature (quadratic families, eigenvalues),
    (iv)/(v) sampled difference quotients against the declared constants.
    """
    ev = SurrogateEvaluator(problem, partition, spec, cta)
    rng = np.random.default_rng(seed)
    m, d = problem.m, problem.d
    worst_cons = 0.0
    worst_major = 0.0
    wit_cons, wit_major = {}, {}
    for r in range(partition.p):
        c = partition.clusters[r]
        for _ in range(3):
            x = rng.standard_normal((m, d))
            yc, yo, ye = ev.consistent_refs(r, x)
            g_s = ev.tilde_phi_r_grad_cluster(r, x, yc, yo, ye)
            gx = problem.grad(x)
            # cluster gradient of Phi_r equals the cluster gradient of Phi
            g_true = np.stack([gx[i] for i in c])
            err = float(np.max(np.abs(g_s - g_true))) / (1.0 + float(np.max(np.abs(g_true))))
            if err > worst_cons:
                worst_cons = err
                wit_cons = {"cluster": r}
        for _ in range(max(samples // max(partition.p, 1), 5)):
            x = rng.standard_normal((m, d))
            yc = {i: rng.standard_normal(d) for i in c}
            yo = {k: rng.standard_normal(d) for i in c for k in partition.n_out[i]}
            ye = {e: (rng.standard_normal(d), rng.standard_normal(d))
                  for e in partition.intra_edges[r]}
            gap = ev.phi_r(r, x) - ev.tilde_phi_r(r, x, yc, yo, ye)
            if gap > worst_major:
                worst_major = gap
                wit_major = {"cluster": r}
    # finite-difference consistency is limited by the FD step itself
    cons_ok = worst_cons <= max(tol_consistency, 1e-5)
    major_ok = worst_major <= tol_major
    if not major_ok:
        wit = {"check": "majorization", **wit_major,
               "consistency_violation": worst_cons}
    elif not cons_ok:
        wit = {"check": "gradient_consistency", **wit_cons,
               "majorization_violation": worst_major}
    else:
        wit = {"consistency_violation": worst_cons,
               "majorization_violation": worst_major}
    return CheckReport("surrogate_regularity", cons_ok and major_ok,
                       float(max(worst_cons, worst_major)),
                       max(tol_consistency, tol_major), wit)


def check_split_consistency(components_by_parent, psi_values, psi_grads,
                            arities, d, samples=50, seed=0, tol=1e-8):
    """Gradient-sum identity of split surrogates at consistent references.

    components_by_parent: dict parent_idx -> list of ComponentSurrogate;
    psi_values/psi_grads: dict parent_idx -> callables on stacked vectors;
    arities: dict parent_idx -> parent tuple.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    wit = {}
    for parent_idx, comps in components_by_parent.items():
        parent = arities[parent_idx]
        val = psi_values[parent_idx]
        grd = psi_grads[parent_idx]
        pos = {n: t for t, n in enumerate(parent)}
        for _ in range(samples):
            xs = {n: rng.standard_normal(d) for n in parent}
            stacked = np.concatenate([xs[n] for n in parent])
            gfull = grd(stacked)
            for i in parent:
                g = np.zeros(d)
                for comp in comps:
                    if i not in comp.support:
                        continue
                    g += comp.grad(grd, {n: xs[n] for n in comp.support}, xs, i)
                ref = gfull[pos[i] * d:(pos[i] + 1) * d]
                err = float(np.linalg.norm(g - ref) / (1.0 + np.linalg.norm(ref)))
                if err > worst:
                    worst = err
                    wit = {"parent": parent_idx, "node": i}
    return CheckReport("split_consistency", worst <= tol, worst, tol, wit)


# ---------------------------------------------------------------------------
# sublinear certificates


def check_sublinear_convex(problem, partition, spec, cta, tau, trace, x0,
                           x_star, phi_star, inputs, tol=1e-9):
    """Convex 1/nu bound past the theorem burn-in.

    RHS(nu) = (Phi(x0) - Phi* + Lt_min ||x0 - x*||^2 / (2 tau max_r |C_r|)) / nu,
    burn-in = 8 (Lt - mu_t / max|C_r|) / mu_t + p K / (A_J + max At_r) with
    K = max_r { bar_L_r (sigma_r + 1)(2 D_r + 1)/2
                + |C_r|^2 D_r (Lt_del_r^2 + sigma_r ell_t_r^2) / (2 mu_t_r^2) }.
    """
    A_r, A_J, At_r = compute_A(partition, inputs, surrogate=True)
    mu_t = min(inputs.mu_tilde_r)
    L_t = max(inputs.L_tilde_r)
    L_t_min = min(inputs.L_tilde_r)
    cmax = max(len(c) for c in partition.clusters)
    K = 0.0
    for r, c in enumerate(partition.clusters):
        Dr = partition.diameters[r]
        term = (inputs.bar_L_r[r] * (inputs.sigma_r[r] + 1) * (2 * Dr + 1) / 2
                + len(c) ** 2 * Dr
                * (inputs.L_tilde_del_r[r] ** 2
                   + inputs.sigma_r[r] * inputs.ell_tilde_r[r] ** 2)
                / (2 * inputs.mu_tilde_r[r] ** 2))
        K = max(K, term)
    denom = A_J + max((At_r[r] for r, c in enumerate(partition.clusters)
                       if len(c) > 1), default=0.0)
    burn_in = 8 * (L_t - mu_t / cmax) / mu_t
    if denom > 0:
        burn_in += partition.p * K / denom
    burn_in = int(math.ceil(burn_in))
    phi0 = problem.value(x0)
    num = (phi0 - phi_star
           + L_t_min * float(np.sum((x0 - x_star) ** 2)) / (2 * tau * cmax))
    worst = -float("inf")
    wit = {"burn_in": burn_in}
    checked = 0
    for nu in range(max(burn_in, 1), len(trace.phi_gap)):
        viol = trace.phi_gap[nu] - num / nu
        checked += 1
        if viol > worst:
            worst = viol
            wit["round"] = nu
    if checked == 0:
        return CheckReport("sublinear_convex", False, float("inf"), tol,
                           {"error": "trace shorter than burn-in", **wit})
    return CheckReport("sublinear_convex", worst <= tol, float(worst), tol, wit)


def check_sublinear_nonconvex(problem, trace_grad_norms, tau, L_tilde,
                              phi0, phi_star, D, tol=1e-9):
    """Nonconvex certificate: for every nu,
    min over the window {D, ..., nu+D-1} of ||grad Phi||^2
      <= 4 Lt (Phi(x0) - Phi*) / (tau nu).
    """
    g2 = [v ** 2 for v in trace_grad_norms]
    worst = -float("inf")
    wit = {}
    best = float("inf")
    # prefix minima of g2 from index D on
    for nu in range(1, len(g2) - D):
        best = min(best, min(g2[D:nu + D]) if nu == 1 else g2[nu + D - 1])
        rhs = 4 * L_tilde * (phi0 - phi_star) / (tau * nu)
        viol = best - rhs
        if viol > worst:
            worst = viol
            wit = {"round": nu}
    return CheckReport("sublinear_nonconvex", worst <= tol, float(worst), tol, wit)
