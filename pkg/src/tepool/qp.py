"""Dense convex quadratic programming with KKT certification.

Canonical form:

    minimize    0.5 * x' Q x + c' x
    subject to  E x = f
                lower <= x <= upper      (+-inf allowed)
                G x <= h

The solver runs operator splitting (ADMM with over-relaxation on the
stacked constraint system) to locate the active set, then polishes by
solving the equality-constrained KKT system exactly and repairing the
active set until primal feasibility, dual feasibility and complementary
slackness all hold. Solutions report a KKT residual; `optimal` status
certifies residual <= qp_tol.

Problems here are small (a few hundred variables) and dense, and the
same problem object is re-solved many times with an updated linear term
by the consensus engine, so structural caches live on the problem and a
previous active set can be passed back in as a warm start.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"

# Tikhonov shift that keeps polish KKT systems nonsingular under
# degenerate active sets; iterative refinement removes its bias.
_KKT_SHIFT = 1e-11


@dataclass
class SolverConfig:
    qp_tol: float = 1e-8
    max_qp_iter: int = 20000
    reg_floor: float = 1e-9
    # operator-splitting internals
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    check_every: int = 25

    def __post_init__(self):
        if min(self.qp_tol, self.max_qp_iter, self.reg_floor) <= 0:
            raise ValueError("solver tolerances and budgets must be positive")


@dataclass
class QpProblem:
    """Dense QP data. E/G may be empty (0-row) arrays.

    eq_labels / ineq_labels / bound_labels are optional diagnostic tags
    (one per equality row / G row / variable) used to name the worst
    violated constraint when an instance is infeasible.
    """

    Q: np.ndarray
    c: np.ndarray
    E: np.ndarray
    f: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    G: np.ndarray
    h: np.ndarray
    eq_labels: list | None = None
    ineq_labels: list | None = None
    bound_labels: list | None = None

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        self.c = np.asarray(self.c, dtype=float).reshape(n)
        self.E = np.asarray(self.E, dtype=float).reshape(-1, n)
        self.f = np.asarray(self.f, dtype=float).reshape(self.E.shape[0])
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).reshape(self.G.shape[0])
        self.lower = np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.asarray(self.upper, dtype=float).reshape(n)
        self._stacked = None
        self._checked = False

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def validate(self):
        """Check symmetry, positive semidefiniteness and bound ordering."""
        if self._checked:
            return
        if self.Q.shape[0] != self.Q.shape[1]:
            raise ValueError("Q must be square")
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > 1e-10:
            raise ValueError("Q must be symmetric")
        if self.n and np.min(np.linalg.eigvalsh(self.Q)) < -1e-8:
            raise ValueError("Q must be positive semidefinite")
        if np.any(self.lower > self.upper):
            raise ValueError("need lower <= upper elementwise")
        self._checked = True

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x)

    def stacked_inequalities(self):
        """One-sided system Ghat x <= hhat: G rows, then finite upper
        bounds, then finite lower bounds (as -x <= -l). Cached."""
        if self._stacked is None:
            self._stacked = _Stacked(self)
        return self._stacked


class _Stacked:
    """Structural caches shared by the splitting and polish phases."""

    def __init__(self, p: QpProblem):
        n = p.n
        up_idx = np.nonzero(np.isfinite(p.upper))[0]
        lo_idx = np.nonzero(np.isfinite(p.lower))[0]
        m = p.G.shape[0]
        rows = [p.G]
        rhs = [p.h]
        eye = np.eye(n)
        rows.append(eye[up_idx])
        rhs.append(p.upper[up_idx])
        rows.append(-eye[lo_idx])
        rhs.append(-p.lower[lo_idx])
        self.Ghat = np.vstack(rows) if n else np.zeros((0, 0))
        self.hhat = np.concatenate(rhs)
        self.m_total = self.Ghat.shape[0]
        self.up_idx, self.lo_idx, self.m_g = up_idx, lo_idx, m

        # opposite-side partner of each one-sided row (-1 = none)
        partner = np.full(self.m_total, -1, dtype=int)
        up_pos = {int(j): m + k for k, j in enumerate(up_idx)}
        lo_pos = {int(j): m + len(up_idx) + k for k, j in enumerate(lo_idx)}
        for j, ku in up_pos.items():
            kl = lo_pos.get(j)
            if kl is not None:
                partner[ku] = kl
                partner[kl] = ku
        self.partner = partner

        # two-sided system for the splitting phase: eq rows, G rows,
        # then one row per variable carrying any finite bound
        bvars = np.union1d(up_idx, lo_idx)
        self.bvars = bvars
        a_rows = [p.E, p.G, eye[bvars]]
        self.A = np.vstack(a_rows) if n else np.zeros((0, 0))
        self.lo = np.concatenate(
            [p.f, np.full(m, -np.inf), p.lower[bvars]]
        )
        self.hi = np.concatenate([p.f, p.h, p.upper[bvars]])
        self.n_eq = p.E.shape[0]
        # map a bound-row dual onto its one-sided indices
        self.bound_up = np.array(
            [up_pos.get(int(j), -1) for j in bvars], dtype=int
        )
        self.bound_lo = np.array(
            [lo_pos.get(int(j), -1) for j in bvars], dtype=int
        )


@dataclass
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray  # one-sided order: G rows, upper bounds, lower bounds
    objective: float
    kkt_residual: float
    iterations: int
    status: str
    active_set: tuple = ()


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Max violation of stationarity, feasibility, dual sign and
    complementary slackness; recomputed from scratch."""
    stk = problem.stacked_inequalities()
    x = solution.x
    mu = solution.ineq_duals
    grad = problem.Q @ x + problem.c
    if problem.E.size:
        grad = grad + problem.E.T @ solution.eq_duals
    if stk.m_total:
        grad = grad + stk.Ghat.T @ mu
    parts = [float(np.max(np.abs(grad), initial=0.0))]
    if problem.E.shape[0]:
        parts.append(float(np.max(np.abs(problem.E @ x - problem.f))))
    if stk.m_total:
        s = stk.Ghat @ x - stk.hhat
        parts.append(float(np.max(s, initial=0.0)))
        parts.append(float(np.max(-mu, initial=0.0)))
        parts.append(float(np.max(np.abs(mu * s), initial=0.0)))
    return max(parts)


def _refine_solve(K, K_reg_lu, rhs, max_steps=6, tol=1e-12):
    """Solve K z = rhs through a regularized factorization plus
    iterative refinement; returns (z, residual_inf)."""
    z = sla.lu_solve(K_reg_lu, rhs)
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    res = rhs - K @ z
    for _ in range(max_steps):
        err = float(np.max(np.abs(res), initial=0.0))
        if err <= tol * scale:
            break
        z = z + sla.lu_solve(K_reg_lu, res)
        res = rhs - K @ z
    return z, float(np.max(np.abs(res), initial=0.0))


class _ActiveSetPolish:
    def __init__(self, problem: QpProblem, cfg: SolverConfig):
        self.p = problem
        self.cfg = cfg
        self.stk = problem.stacked_inequalities()

    def kkt_solve(self, active: list[int]):
        p, stk = self.p, self.stk
        n, n_eq = p.n, p.E.shape[0]
        ga = stk.Ghat[active] if active else np.zeros((0, n))
        na = len(active)
        dim = n + n_eq + na
        K = np.zeros((dim, dim))
        K[:n, :n] = p.Q
        if n_eq:
            K[:n, n : n + n_eq] = p.E.T
            K[n : n + n_eq, :n] = p.E
        if na:
            K[:n, n + n_eq :] = ga.T
            K[n + n_eq :, :n] = ga
        rhs = np.concatenate([-p.c, p.f, stk.hhat[active]])
        K_reg = K + _KKT_SHIFT * np.diag(
            np.concatenate([np.ones(n), -np.ones(n_eq + na)])
        )
        try:
            lu = sla.lu_factor(K_reg)
            z, res = _refine_solve(K, lu, rhs)
        except (sla.LinAlgError, ValueError):
            res = np.inf
        if not np.isfinite(res) or res > 1e-9 * max(1.0, np.max(np.abs(rhs))):
            z, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        x = z[:n]
        nu = z[n : n + n_eq]
        mu_a = z[n + n_eq :]
        return x, nu, mu_a

    def run(self, active0, max_rounds=200):
        """Repair an active-set guess until KKT holds. Returns
        (x, nu, mu, active, ok).

        Starts in multi-swap mode (all violated rows in, all
        negative-dual rows out at once), which usually lands in a few
        iterations even when the guess is far off; on a revisited set
        it falls back to classic single-swap steps, which cannot cycle
        on a strictly convex problem.
        """
        p, stk, tol = self.p, self.stk, self.cfg.qp_tol
        active = sorted(set(int(k) for k in active0 if 0 <= int(k) < stk.m_total))
        # never start with both sides of a pair
        drop = set()
        for k in active:
            pk = stk.partner[k]
            if pk >= 0 and pk in active and k < pk:
                drop.add(pk)
        active = [k for k in active if k not in drop]
        seen = set()
        multi = True
        x = nu = mu_a = None
        for _ in range(max_rounds):
            key = frozenset(active)
            if key in seen:
                if multi:
                    multi = False
                else:
                    break
            seen.add(key)
            x, nu, mu_a = self.kkt_solve(active)
            slack = stk.Ghat @ x - stk.hhat if stk.m_total else np.zeros(0)
            mask = np.zeros(stk.m_total, dtype=bool)
            if active:
                mask[active] = True
            viol = np.nonzero(~mask & (slack > 0.5 * tol))[0]
            neg = (
                [i for i in range(len(active)) if mu_a[i] < -0.5 * tol]
                if len(active)
                else []
            )
            if viol.size == 0 and not neg:
                mu = np.zeros(stk.m_total)
                if len(active):
                    mu[active] = np.maximum(mu_a, 0.0)
                return x, nu, mu, tuple(active), True
            if multi:
                dropped = {active[i] for i in neg}
                kept = [k for k in active if k not in dropped]
                order = viol[np.argsort(-slack[viol], kind="stable")]
                for j in order:
                    pk = stk.partner[j]
                    if pk >= 0 and pk in kept:
                        kept.remove(pk)
                    kept.append(int(j))
                active = sorted(set(kept))
            else:
                if viol.size:
                    j = int(viol[np.argmax(slack[viol])])
                    pk = stk.partner[j]
                    active = sorted({k for k in active if k != pk} | {j})
                else:
                    del active[int(np.argmin(mu_a))]
        mu = np.zeros(stk.m_total)
        if x is None:
            x, nu, mu_a = self.kkt_solve(active)
        if len(active):
            mu[active] = mu_a
        return x, nu, mu, tuple(active), False


def _split_factor(problem: QpProblem, cfg: SolverConfig, rho_base: float):
    """KKT factorization for the splitting phase, cached per problem;
    the consensus engine re-solves one structure thousands of times."""
    cache = getattr(problem, "_split_lu", None)
    if cache is None:
        cache = problem._split_lu = {}
    lu = cache.get(rho_base)
    if lu is None:
        stk = problem.stacked_inequalities()
        n, m2 = problem.n, stk.A.shape[0]
        rho = np.full(m2, rho_base)
        rho[: stk.n_eq] *= 1e3
        K = np.zeros((n + m2, n + m2))
        K[:n, :n] = problem.Q + cfg.sigma * np.eye(n)
        K[:n, n:] = stk.A.T
        K[n:, :n] = stk.A
        K[n:, n:] = -np.diag(1.0 / rho)
        lu = sla.lu_factor(K)
        if len(cache) > 8:
            cache.clear()
        cache[rho_base] = lu
    return lu


def _split_iterate(problem: QpProblem, cfg: SolverConfig, budget: int, state=None):
    """Over-relaxed splitting iterations on the two-sided system.

    Returns (state, status, iters) where status is one of 'converged',
    'infeasible', 'budget'. state = (x, z, y, rho_base).
    """
    stk = problem.stacked_inequalities()
    n, m2 = problem.n, stk.A.shape[0]
    if state is None:
        x = np.zeros(n)
        z = np.clip(np.zeros(m2), stk.lo, stk.hi)
        y = np.zeros(m2)
        rho_base = cfg.rho
    else:
        x, z, y, rho_base = state
        x, z, y = x.copy(), z.copy(), y.copy()

    sigma, alpha = cfg.sigma, cfg.alpha
    rho = np.full(m2, rho_base)
    rho[: stk.n_eq] *= 1e3
    lu = _split_factor(problem, cfg, rho_base)
    it = 0
    status = "budget"
    y_prev_check = y.copy()
    while it < budget:
        for _ in range(cfg.check_every):
            rhs = np.concatenate([sigma * x - problem.c, z - y / rho])
            sol = sla.lu_solve(lu, rhs)
            x_t = sol[:n]
            zt = z + (sol[n:] - y) / rho
            x = alpha * x_t + (1 - alpha) * x
            z_arg = alpha * zt + (1 - alpha) * z + y / rho
            z_new = np.clip(z_arg, stk.lo, stk.hi)
            y = rho * (z_arg - z_new)
            z = z_new
            it += 1
        ax = stk.A @ x
        r_prim = float(np.max(np.abs(ax - z), initial=0.0))
        r_dual = float(
            np.max(np.abs(problem.Q @ x + problem.c + stk.A.T @ y), initial=0.0)
        )
        scale_p = max(1.0, float(np.max(np.abs(ax), initial=0.0)))
        scale_d = max(1.0, float(np.max(np.abs(problem.Q @ x), initial=0.0)))
        if r_prim <= 1e-7 * scale_p and r_dual <= 1e-7 * scale_d:
            status = "converged"
            break
        dy = y - y_prev_check
        if r_prim > 1e-5 * scale_p and _primal_infeasibility_certificate(stk, dy):
            status = "infeasible"
            break
        y_prev_check = y.copy()
        # rebalance the penalty when residuals drift apart
        ratio = np.sqrt(
            (r_prim / scale_p + 1e-16) / (r_dual / scale_d + 1e-16)
        )
        if ratio > 5.0 or ratio < 0.2:
            rho_base = float(np.clip(rho_base * ratio, 1e-6, 1e6))
            rho = np.full(m2, rho_base)
            rho[: stk.n_eq] *= 1e3
            lu = _split_factor(problem, cfg, rho_base)
    return (x, z, y, rho_base), status, it


def _primal_infeasibility_certificate(stk: _Stacked, dy, tol=1e-10) -> bool:
    norm = float(np.max(np.abs(dy), initial=0.0))
    if norm <= tol:
        return False
    d = dy / norm
    if float(np.max(np.abs(stk.A.T @ d), initial=0.0)) > 1e-8:
        return False
    pos, neg = np.maximum(d, 0.0), np.minimum(d, 0.0)
    # an unbounded side with mass on it kills the certificate
    if np.any(pos[~np.isfinite(stk.hi)] > 1e-10):
        return False
    if np.any(neg[~np.isfinite(stk.lo)] < -1e-10):
        return False
    support = float(
        np.sum(stk.hi[np.isfinite(stk.hi)] * pos[np.isfinite(stk.hi)])
        + np.sum(stk.lo[np.isfinite(stk.lo)] * neg[np.isfinite(stk.lo)])
    )
    return support < -1e-8


def _active_guess_from_split(stk: _Stacked, x, y, tol=1e-7):
    active = []
    m, n_eq = stk.m_g, stk.n_eq
    for i in range(m):
        if y[n_eq + i] > tol or stk.hi[n_eq + i] - (stk.A[n_eq + i] @ x) < tol:
            active.append(i)
    for k, j in enumerate(stk.bvars):
        yk = y[n_eq + m + k]
        if yk > tol and stk.bound_up[k] >= 0:
            active.append(int(stk.bound_up[k]))
        elif yk < -tol and stk.bound_lo[k] >= 0:
            active.append(int(stk.bound_lo[k]))
        else:
            if stk.bound_up[k] >= 0 and stk.hi[n_eq + m + k] - x[j] < tol:
                active.append(int(stk.bound_up[k]))
            elif stk.bound_lo[k] >= 0 and x[j] - stk.lo[n_eq + m + k] < tol:
                active.append(int(stk.bound_lo[k]))
    return active


def solve_qp(
    problem: QpProblem,
    config: SolverConfig | None = None,
    warm_active=None,
) -> QpSolution:
    """Solve the QP; deterministic for fixed inputs and config.

    warm_active: active set from a previous solution of the same
    problem structure; when it checks out the splitting phase is
    skipped entirely.
    """
    cfg = config or SolverConfig()
    problem.validate()
    stk = problem.stacked_inequalities()
    polish = _ActiveSetPolish(problem, cfg)
    iters = 0

    def build(x, nu, mu, active, status):
        sol = QpSolution(
            x=x,
            eq_duals=nu,
            ineq_duals=mu,
            objective=problem.objective(x),
            kkt_residual=np.inf,
            iterations=iters,
            status=status,
            active_set=active,
        )
        sol.kkt_residual = kkt_residual(problem, sol)
        if status == OPTIMAL and sol.kkt_residual > cfg.qp_tol:
            sol.status = MAX_ITER
        return sol

    if warm_active is not None:
        x, nu, mu, active, ok = polish.run(warm_active, max_rounds=60)
        iters += 1
        if ok:
            sol = build(x, nu, mu, active, OPTIMAL)
            if sol.status == OPTIMAL:
                return sol

    state = getattr(problem, "_split_state", None)
    remaining = cfg.max_qp_iter
    for attempt in range(3):
        budget = min(remaining, 2000 * (attempt + 1))
        if budget <= 0:
            break
        state, status, done = _split_iterate(problem, cfg, budget, state)
        problem._split_state = state
        iters += done
        remaining -= done
        if status == "infeasible":
            x, _, y, _ = state
            nu = y[: stk.n_eq].copy()
            mu = _mu_from_two_sided(stk, y)
            problem._split_state = None
            return build(x, nu, mu, (), INFEASIBLE)
        x, z, y, _ = state
        guess = _active_guess_from_split(stk, x, y)
        xs, nu, mu, active, ok = polish.run(guess)
        if ok:
            sol = build(xs, nu, mu, active, OPTIMAL)
            if sol.status == OPTIMAL:
                return sol
        if status == "converged":
            # splitting converged but polish could not certify; accept
            # the better of the two iterates
            sol_p = build(xs, nu, mu, active, MAX_ITER)
            nu2 = y[: stk.n_eq].copy()
            sol_s = build(x, nu2, _mu_from_two_sided(stk, y), (), MAX_ITER)
            return sol_p if sol_p.kkt_residual <= sol_s.kkt_residual else sol_s

    x, z, y, _ = state
    nu = y[: stk.n_eq].copy()
    return build(x, nu, _mu_from_two_sided(stk, y), (), MAX_ITER)


def _mu_from_two_sided(stk: _Stacked, y):
    mu = np.zeros(stk.m_total)
    n_eq, m = stk.n_eq, stk.m_g
    mu[:m] = np.maximum(y[n_eq : n_eq + m], 0.0)
    for k in range(len(stk.bvars)):
        yk = y[n_eq + m + k]
        if yk > 0 and stk.bound_up[k] >= 0:
            mu[stk.bound_up[k]] = yk
        elif yk < 0 and stk.bound_lo[k] >= 0:
            mu[stk.bound_lo[k]] = -yk
    return mu


def feasibility_gap(problem: QpProblem):
    """Smallest constraint relaxation that admits a point.

    Solves min 0.5*||s||^2 with lo <= Ax - s <= hi over (x, s); the gap
    is max |s*|. Returns (gap, worst_label) where worst_label names the
    most relaxed constraint row, for diagnostics.
    """
    stk = problem.stacked_inequalities()
    n, m2 = problem.n, stk.A.shape[0]
    nv = n + m2
    big_q = np.zeros((nv, nv))
    big_q[:n, :n] = 1e-9 * np.eye(n)
    big_q[n:, n:] = np.eye(m2)
    big_a = np.hstack([stk.A, -np.eye(m2)])
    relax = QpProblem(
        Q=big_q,
        c=np.zeros(nv),
        E=np.zeros((0, nv)),
        f=np.zeros(0),
        lower=np.full(nv, -np.inf),
        upper=np.full(nv, np.inf),
        G=np.vstack([big_a, -big_a]),
        h=np.concatenate(
            [
                np.where(np.isfinite(stk.hi), stk.hi, 1e12),
                np.where(np.isfinite(stk.lo), -stk.lo, 1e12),
            ]
        ),
    )
    sol = solve_qp(relax, SolverConfig(qp_tol=1e-6))
    s = sol.x[n:]
    worst = int(np.argmax(np.abs(s))) if m2 else 0
    return float(np.max(np.abs(s), initial=0.0)), _row_label(problem, stk, worst)


def _row_label(problem: QpProblem, stk: _Stacked, row: int):
    n_eq, m = stk.n_eq, stk.m_g
    if row < n_eq:
        labels = problem.eq_labels
        return labels[row] if labels else ("eq", row)
    if row < n_eq + m:
        labels = problem.ineq_labels
        return labels[row - n_eq] if labels else ("ineq", row - n_eq)
    j = int(stk.bvars[row - n_eq - m])
    labels = problem.bound_labels
    return labels[j] if labels else ("bound", j)
