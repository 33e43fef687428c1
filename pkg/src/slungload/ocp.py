"""Stage-structured quadratic programs with soft (slack) bound constraints.

Problem class::

    min  sum_n  1/2 x'Qx + u'Sx + 1/2 u'Ru + q'x + r'u
                + 1/2 sl'Zl sl + 1/2 su'Zu su
    s.t. x_{n+1} = A x_n + B u_n + b,   x_0 = x_init
         lb - sl <= C x_n + D u_n <= ub + su,   sl, su >= 0

When a stage gives no ``C``/``D``, its bounds apply to the stacked vector
``[u; x]``. Slacks carry a pure quadratic penalty, so after eliminating them
the objective is a convex, continuously differentiable piecewise quadratic in
``(x, u)``. Two methods are provided:

``"newton"``
    Active-set (semismooth) Newton iterations. Each iteration solves the
    quadratic model for the current violated-bound set with one Riccati
    sweep, followed by an exact line search. Terminates once the violated set
    is reproduced by a full step, at which point the iterate is exact.
``"admm"``
    Operator splitting on ``v = C x + D u`` with a cached Riccati
    factorization for the ``(x, u)`` update. Supports warm starts of both
    primal and scaled dual variables.

Stages may be grouped into blocks (partial condensing) before solving.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class DimensionMismatch(ValueError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    INFEASIBLE = "Infeasible"


def _vec(v, n):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise DimensionMismatch(f"expected vector of length {n}, got {v.shape[0]}")
    return v


def _mat(M, r, c, name):
    if M is None:
        return np.zeros((r, c))
    M = np.asarray(M, dtype=float)
    if M.ndim == 1 and r == c and M.shape[0] == r:
        M = np.diag(M)
    if M.shape != (r, c):
        raise DimensionMismatch(f"{name}: expected shape {(r, c)}, got {M.shape}")
    return M


@dataclass(eq=False)
class OcpStage:
    """One stage of the ladder.

    ``Zl``/``Zu`` are the diagonals of the slack penalty matrices. ``lb``/``ub``
    may contain ``-inf``/``inf`` for unbounded entries. A terminal stage has
    ``A``, ``B`` and ``R`` left as ``None``.
    """

    Q: np.ndarray
    q: np.ndarray | None = None
    R: np.ndarray | None = None
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    Zl: np.ndarray | None = None
    Zu: np.ndarray | None = None
    r: np.ndarray | None = None
    S: np.ndarray | None = None
    b: np.ndarray | None = None
    C: np.ndarray | None = None
    D: np.ndarray | None = None

    @property
    def nx(self):
        return np.asarray(self.Q).shape[0]

    @property
    def nu(self):
        if self.B is not None:
            return np.asarray(self.B).shape[1]
        if self.R is not None:
            return np.asarray(self.R).shape[0]
        return 0


@dataclass(eq=False)
class OcpQp:
    x0: np.ndarray
    stages: list
    terminal: OcpStage

    @property
    def N(self):
        return len(self.stages)

    @property
    def all_stages(self):
        return list(self.stages) + [self.terminal]


@dataclass(eq=False)
class OcpSolution:
    """Primal solution plus diagnostics.

    The KKT residual, objective, costates ``lam`` and bound multipliers ``y``
    (``mu_u - mu_l`` per stage) are evaluated on first access.
    """

    x: list
    u: list
    sl: list
    su: list
    status: Status
    iterations: int
    info: dict = field(default_factory=dict)
    _diag: object = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def _get(self, key):
        if key not in self._cache:
            self._cache.update(self._diag(self))
        return self._cache[key]

    @property
    def kkt_residual(self) -> float:
        return self._get("kkt_residual")

    @property
    def objective(self) -> float:
        return self._get("objective")

    @property
    def lam(self):
        return self._get("lam")

    @property
    def y(self):
        return self._get("y")

    @property
    def X(self):
        return np.vstack(self.x)

    @property
    def U(self):
        return np.vstack(self.u) if self.u else np.zeros((0, 0))


@dataclass
class SolverSettings:
    method: str = "newton"
    tol: float = 1e-6
    max_iter: int = 200
    # group this many stages per block before solving (None: no condensing)
    block_size: int | None = None
    # retry with full condensing when the sparse solve stalls and N <= this
    dense_fallback_max_n: int = 60
    rho: float = 1.0
    adaptive_rho: bool = True


# ----------------------------------------------------------------------------
# normalized stage data


@dataclass(eq=False)
class _Stage:
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    q: np.ndarray
    r: np.ndarray
    A: np.ndarray | None
    B: np.ndarray | None
    b: np.ndarray | None
    C: np.ndarray
    D: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    zl: np.ndarray
    zu: np.ndarray
    # rows that carry a finite bound
    rows: np.ndarray
    m_full: int


def _normalize_stage(st: OcpStage, nx, nx_next, terminal, memo=None):
    # Stages built by the MPC layers share matrix objects, so each distinct
    # object is validated once per problem. The memo keeps the originals alive
    # so their ids stay unique.
    memo = {} if memo is None else memo

    def mat(M, r, c, name):
        if M is None:
            key = (None, name, r, c)
        else:
            key = (id(M), r, c)
        if key not in memo:
            memo[key] = (M, _mat(M, r, c, name))
        return memo[key][1]

    Q = mat(st.Q, nx, nx, "Q")
    if terminal:
        nu = 0
        if st.A is not None or st.B is not None:
            raise DimensionMismatch("terminal stage must not carry dynamics")
    else:
        if st.A is None or st.B is None:
            raise DimensionMismatch("non-terminal stage needs A and B")
        nu = np.asarray(st.B).shape[1]
    R = mat(st.R, nu, nu, "R")
    S = mat(st.S, nu, nx, "S")
    q = _vec(st.q, nx)
    r = _vec(st.r, nu)
    if terminal:
        A = B = b = None
    else:
        A = mat(st.A, nx_next, nx, "A")
        B = mat(st.B, nx_next, nu, "B")
        b = _vec(st.b, nx_next)

    parts = (st.C, st.D, st.lb, st.ub, st.Zl, st.Zu)
    key = ("bounds", nx, nu) + tuple(id(v) for v in parts)
    if key not in memo:
        memo[key] = (parts, _normalize_bounds(st, nx, nu))
    C, D, lb, ub, zl, zu, rows, m = memo[key][1]
    return _Stage(Q, S, R, q, r, A, B, b, C, D, lb, ub, zl, zu, rows, m)


def _normalize_bounds(st, nx, nu):
    if st.C is None and st.D is None:
        m = nu + nx
        C = np.vstack([np.zeros((nu, nx)), np.eye(nx)])
        D = np.vstack([np.eye(nu), np.zeros((nx, nu))])
    else:
        m = np.asarray(st.C if st.C is not None else st.D).shape[0]
        C = _mat(st.C, m, nx, "C")
        D = _mat(st.D, m, nu, "D")
    lb = np.full(m, -np.inf) if st.lb is None else _vec(st.lb, m)
    ub = np.full(m, np.inf) if st.ub is None else _vec(st.ub, m)
    zl = _vec(np.diag(st.Zl) if np.ndim(st.Zl) == 2 else st.Zl, m)
    zu = _vec(np.diag(st.Zu) if np.ndim(st.Zu) == 2 else st.Zu, m)
    if np.any(zl < 0) or np.any(zu < 0):
        raise ValueError("slack penalties must be non-negative")
    both = np.isfinite(lb) & np.isfinite(ub)
    if np.any(lb[both] > ub[both]):
        raise ValueError("lb > ub in a bounded row")
    rows = np.flatnonzero(np.isfinite(lb) | np.isfinite(ub))
    return C[rows], D[rows], lb[rows], ub[rows], zl[rows], zu[rows], rows, m


def _normalize(qp: OcpQp):
    if qp.N < 1:
        raise DimensionMismatch("horizon must contain at least one stage")
    x0 = np.asarray(qp.x0, dtype=float).reshape(-1)
    out = []
    memo = {}
    nx = x0.shape[0]
    for n, st in enumerate(qp.stages):
        if np.asarray(st.Q).shape[0] != nx:
            raise DimensionMismatch(f"stage {n}: state dimension {np.asarray(st.Q).shape[0]} != {nx}")
        nx_next = qp.all_stages[n + 1].nx
        out.append(_normalize_stage(st, nx, nx_next, terminal=False, memo=memo))
        nx = nx_next
    if qp.terminal.nx != nx:
        raise DimensionMismatch("terminal state dimension mismatch")
    out.append(_normalize_stage(qp.terminal, nx, None, terminal=True, memo=memo))
    return x0, out


# ----------------------------------------------------------------------------
# Riccati recursion


def _riccati_factor(stages, extra=None):
    """Backward matrix pass. ``extra`` adds diagonal row weights ``w`` per stage
    (Hessian contribution ``[C D]' diag(w) [C D]``)."""
    N = len(stages) - 1
    facs = [None] * N
    Ps = [None] * (N + 1)
    T = stages[N]
    P = T.Q.copy()
    if extra is not None and T.C.shape[0]:
        P += T.C.T @ (extra[N][:, None] * T.C)
    Ps[N] = P
    for n in range(N - 1, -1, -1):
        s = stages[n]
        Q, S, R = s.Q, s.S, s.R
        if extra is not None and s.C.shape[0]:
            w = extra[n][:, None]
            Q = Q + s.C.T @ (w * s.C)
            S = S + s.D.T @ (w * s.C)
            R = R + s.D.T @ (w * s.D)
        PA = P @ s.A
        PB = P @ s.B
        Huu = R + s.B.T @ PB
        Hux = S + s.B.T @ PA
        L = cho_factor(0.5 * (Huu + Huu.T), check_finite=False)
        K = -cho_solve(L, Hux, check_finite=False)
        P = Q + s.A.T @ PA + Hux.T @ K
        P = 0.5 * (P + P.T)
        facs[n] = (L, K, Hux)
        Ps[n] = P
    return facs, Ps


def _riccati_solve(x0, stages, facs, Ps, lin_x, lin_u):
    """Affine pass + forward rollout for linear terms ``lin_x[n]``/``lin_u[n]``.

    Returns states, inputs and costates ``lam_n = P_n x_n + p_n``.
    """
    N = len(stages) - 1
    ps = [None] * (N + 1)
    ks = [None] * N
    p = lin_x[N]
    ps[N] = p
    for n in range(N - 1, -1, -1):
        s = stages[n]
        L, K, Hux = facs[n]
        Pn1 = Ps[n + 1]
        tmp = Pn1 @ s.b + p
        hu = lin_u[n] + s.B.T @ tmp
        k = -cho_solve(L, hu, check_finite=False)
        p = lin_x[n] + s.A.T @ tmp + Hux.T @ k
        ks[n] = k
        ps[n] = p
    xs = [None] * (N + 1)
    us = [None] * N
    x = x0
    for n in range(N):
        s = stages[n]
        L, K, _ = facs[n]
        xs[n] = x
        u = K @ x + ks[n]
        us[n] = u
        x = s.A @ x + s.B @ u + s.b
    xs[N] = x
    lam = [Ps[n] @ xs[n] + ps[n] for n in range(N + 1)]
    return xs, us, lam


def _rollout(x0, stages, us):
    xs = [x0]
    x = x0
    for n, s in enumerate(stages[:-1]):
        x = s.A @ x + s.B @ us[n] + s.b
        xs.append(x)
    return xs


def _row_values(stages, xs, us):
    out = []
    for n, s in enumerate(stages):
        g = s.C @ xs[n]
        if n < len(us) and s.D.shape[1]:
            g = g + s.D @ us[n]
        out.append(g)
    return out


def _quad_cost(stages, xs, us):
    c = 0.0
    for n, s in enumerate(stages):
        x = xs[n]
        c += 0.5 * x @ s.Q @ x + s.q @ x
        if n < len(us):
            u = us[n]
            c += 0.5 * u @ s.R @ u + u @ s.S @ x + s.r @ u
    return c


def _penalty(g, lb, ub, zl, zu):
    with np.errstate(invalid="ignore"):
        hi = np.where(np.isfinite(ub), np.maximum(g - ub, 0.0), 0.0)
        lo = np.where(np.isfinite(lb), np.maximum(lb - g, 0.0), 0.0)
    return 0.5 * np.sum(zu * hi**2) + 0.5 * np.sum(zl * lo**2)


# ----------------------------------------------------------------------------
# Newton / active-set method


def _active(g, s):
    up = (g > s.ub) & (s.zu > 0)
    lo = (g < s.lb) & (s.zl > 0)
    return up, lo


def _line_search(stages, xs, us, dxs, dus):
    """Exact minimizer over alpha in [0, 1] of the piecewise quadratic objective."""
    c1 = 0.0
    c2 = 0.0
    for n, s in enumerate(stages):
        x, dx = xs[n], dxs[n]
        c1 += (s.Q @ x + s.q) @ dx
        c2 += dx @ s.Q @ dx
        if n < len(us):
            u, du = us[n], dus[n]
            c1 += (s.R @ u + s.S @ x + s.r) @ du + (s.S.T @ u) @ dx
            c2 += du @ s.R @ du + 2.0 * du @ s.S @ dx
    g = np.concatenate(_row_values(stages, xs, us))
    dg = np.concatenate(_row_values(stages, dxs, dus))
    lb = np.concatenate([s.lb for s in stages])
    ub = np.concatenate([s.ub for s in stages])
    zl = np.concatenate([s.zl for s in stages])
    zu = np.concatenate([s.zu for s in stages])

    def dphi(a):
        ga = g + a * dg
        with np.errstate(invalid="ignore"):
            hi = np.where(np.isfinite(ub), np.maximum(ga - ub, 0.0), 0.0)
            lo = np.where(np.isfinite(lb), np.maximum(lb - ga, 0.0), 0.0)
        return c1 + a * c2 + np.sum(zu * hi * dg) - np.sum(zl * lo * dg)

    if dphi(1.0) <= 0.0:
        return 1.0
    if dphi(0.0) >= 0.0:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        bps = np.concatenate([(ub - g) / dg, (lb - g) / dg])
    bps = bps[np.isfinite(bps) & (bps > 0.0) & (bps < 1.0)]
    pts = np.concatenate([[0.0], np.sort(bps), [1.0]])
    lo_i, hi_i = 0, len(pts) - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if dphi(pts[mid]) > 0.0:
            hi_i = mid
        else:
            lo_i = mid
    a, b = pts[lo_i], pts[hi_i]
    da, db = dphi(a), dphi(b)
    if db == da:
        return b
    return float(np.clip(a - da * (b - a) / (db - da), a, b))


def _solve_newton(x0, stages, settings, warm_u=None):
    N = len(stages) - 1
    if warm_u is not None:
        us = [np.asarray(u, dtype=float).copy() for u in warm_u]
    else:
        us = [np.zeros(s.R.shape[0]) for s in stages[:-1]]
    xs = _rollout(x0, stages, us)
    status = Status.MAX_ITERATIONS
    lam = None
    it = 0
    while it < settings.max_iter:
        g = _row_values(stages, xs, us)
        act = [_active(g[n], s) for n, s in enumerate(stages)]
        w = [s.zu * a[0] + s.zl * a[1] for s, a in zip(stages, act)]
        lin_x, lin_u = [], []
        for n, s in enumerate(stages):
            up, lo = act[n]
            shift = -(s.zu * up * np.where(up, s.ub, 0.0) + s.zl * lo * np.where(lo, s.lb, 0.0))
            lin_x.append(s.q + s.C.T @ shift)
            if n < N:
                lin_u.append(s.r + s.D.T @ shift)
        facs, Ps = _riccati_factor(stages, extra=w)
        xs_new, us_new, lam = _riccati_solve(x0, stages, facs, Ps, lin_x, lin_u)
        it += 1
        dxs = [a - b for a, b in zip(xs_new, xs)]
        dus = [a - b for a, b in zip(us_new, us)]
        alpha = _line_search(stages, xs, us, dxs, dus)
        # The model Hessian is positive definite, so the Newton direction is a
        # strict descent direction unless the gradient vanishes: alpha == 0
        # only happens at the optimum (up to rounding).
        if alpha == 0.0:
            status = Status.OPTIMAL
            break
        if alpha > 1.0 - 1e-9:
            alpha = 1.0
            xs, us = xs_new, us_new
        else:
            xs = [x + alpha * d for x, d in zip(xs, dxs)]
            us = [u + alpha * d for u, d in zip(us, dus)]
        g_new = _row_values(stages, xs, us)
        same = all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(act, (_active(g_new[n], s) for n, s in enumerate(stages)))
        )
        if alpha == 1.0 and same:
            status = Status.OPTIMAL
            break
    return xs, us, status, it, {}


# ----------------------------------------------------------------------------
# ADMM


def _prox(t, s, rho):
    v = t.copy()
    hi = t > s.ub
    lo = t < s.lb
    v[hi] = (rho * t[hi] + s.zu[hi] * s.ub[hi]) / (rho + s.zu[hi])
    v[lo] = (rho * t[lo] + s.zl[lo] * s.lb[lo]) / (rho + s.zl[lo])
    return v


def _solve_admm(x0, stages, settings, warm=None):
    N = len(stages) - 1
    rho = float(settings.rho)
    warm = warm or {}
    if warm.get("u") is not None:
        us = [np.asarray(u, dtype=float).copy() for u in warm["u"]]
        xs = _rollout(x0, stages, us)
    else:
        us = [np.zeros(s.R.shape[0]) for s in stages[:-1]]
        xs = _rollout(x0, stages, us)
    gz = _row_values(stages, xs, us)
    v = [_prox(g, s, rho) for g, s in zip(gz, stages)]
    if warm.get("y") is not None:
        w = [np.asarray(y, dtype=float) / rho for y in warm["y"]]
    else:
        w = [np.zeros_like(g) for g in gz]

    def factor(rho):
        return _riccati_factor(stages, extra=[np.full(s.C.shape[0], rho) for s in stages])

    facs, Ps = factor(rho)
    status = Status.MAX_ITERATIONS
    it = 0
    while it < settings.max_iter:
        lin_x, lin_u = [], []
        for n, s in enumerate(stages):
            t = rho * (w[n] - v[n])
            lin_x.append(s.q + s.C.T @ t)
            if n < N:
                lin_u.append(s.r + s.D.T @ t)
        xs, us, _ = _riccati_solve(x0, stages, facs, Ps, lin_x, lin_u)
        gz = _row_values(stages, xs, us)
        v_old = v
        v = [_prox(g + wn, s, rho) for g, wn, s in zip(gz, w, stages)]
        w = [wn + g - vn for wn, g, vn in zip(w, gz, v)]
        it += 1
        r_prim = max((np.max(np.abs(g - vn)) for g, vn in zip(gz, v) if g.size), default=0.0)
        r_dual = 0.0
        for n, s in enumerate(stages):
            if not s.C.shape[0]:
                continue
            dv = rho * (v[n] - v_old[n])
            r_dual = max(r_dual, np.max(np.abs(s.C.T @ dv)))
            if n < N and s.D.shape[1]:
                r_dual = max(r_dual, np.max(np.abs(s.D.T @ dv)))
        if r_prim <= settings.tol and r_dual <= settings.tol:
            status = Status.OPTIMAL
            break
        if settings.adaptive_rho and it % 10 == 0 and r_prim > 0 and r_dual > 0:
            ratio = np.sqrt(r_prim / r_dual)
            if ratio > 5.0 or ratio < 0.2:
                new_rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                w = [wn * rho / new_rho for wn in w]
                rho = new_rho
                facs, Ps = factor(rho)
    y = [rho * wn for wn in w]
    return xs, us, status, it, {"rho": rho, "y": y}


# ----------------------------------------------------------------------------
# partial condensing


def condense(qp: OcpQp, block_size: int):
    """Group consecutive stages into blocks of ``block_size``.

    Returns the condensed problem and the list of ``(start, stop)`` stage
    ranges. Inner-stage bounds become general rows on the block state and
    stacked block input.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    x0, stages = _normalize(qp)
    N = len(stages) - 1
    blocks = [(s, min(s + block_size, N)) for s in range(0, N, block_size)]
    new_stages = []
    for n0, n1 in blocks:
        nx = stages[n0].Q.shape[0]
        nus = [stages[j].R.shape[0] for j in range(n0, n1)]
        nU = sum(nus)
        offs = np.concatenate([[0], np.cumsum(nus)])
        Phi = np.eye(nx)
        Gam = np.zeros((nx, nU))
        c = np.zeros(nx)
        Qh = np.zeros((nx, nx))
        Sh = np.zeros((nU, nx))
        Rh = np.zeros((nU, nU))
        qh = np.zeros(nx)
        rh = np.zeros(nU)
        Cs, Ds, lbs, ubs, zls, zus = [], [], [], [], [], []
        for j in range(n0, n1):
            s = stages[j]
            sl = slice(offs[j - n0], offs[j - n0 + 1])
            E = np.zeros((nus[j - n0], nU))
            E[:, sl] = np.eye(nus[j - n0])
            Qc = s.Q @ c + s.q
            Qh += Phi.T @ s.Q @ Phi
            SE = E.T @ s.S
            Sh += Gam.T @ s.Q @ Phi + SE @ Phi
            cross = SE @ Gam
            Rh += Gam.T @ s.Q @ Gam + E.T @ s.R @ E + cross + cross.T
            qh += Phi.T @ Qc
            rh += Gam.T @ Qc + E.T @ (s.S @ c + s.r)
            if s.C.shape[0]:
                Cs.append(s.C @ Phi)
                Ds.append(s.C @ Gam + s.D @ E)
                off = s.C @ c
                lbs.append(s.lb - off)
                ubs.append(s.ub - off)
                zls.append(s.zl)
                zus.append(s.zu)
            Phi, Gam, c = s.A @ Phi, s.A @ Gam + s.B @ E, s.A @ c + s.b
        if Cs:
            C, D = np.vstack(Cs), np.vstack(Ds)
            lb, ub = np.concatenate(lbs), np.concatenate(ubs)
            zl, zu = np.concatenate(zls), np.concatenate(zus)
        else:
            C, D = np.zeros((0, nx)), np.zeros((0, nU))
            lb = ub = zl = zu = np.zeros(0)
        new_stages.append(OcpStage(Q=Qh, q=qh, R=Rh, r=rh, S=Sh, A=Phi, B=Gam, b=c,
                                   C=C, D=D, lb=lb, ub=ub, Zl=zl, Zu=zu))
    T = stages[N]
    Cf = np.zeros((T.C.shape[0], T.Q.shape[0])) if not T.C.shape[0] else T.C
    term = OcpStage(Q=T.Q, q=T.q, C=Cf, D=np.zeros((Cf.shape[0], 0)), lb=T.lb, ub=T.ub,
                    Zl=T.zl, Zu=T.zu)
    return OcpQp(x0=x0, stages=new_stages, terminal=term), blocks


def _expand_inputs(qp: OcpQp, blocks, u_blocks):
    nus = [st.nu for st in qp.stages]
    us = []
    for (n0, n1), U in zip(blocks, u_blocks):
        off = 0
        for j in range(n0, n1):
            us.append(U[off:off + nus[j]])
            off += nus[j]
    return us


# ----------------------------------------------------------------------------
# public API


def _slacks(stages, xs, us):
    g = _row_values(stages, xs, us)
    sl_full, su_full = [], []
    for n, s in enumerate(stages):
        sl = np.zeros(s.m_full)
        su = np.zeros(s.m_full)
        with np.errstate(invalid="ignore"):
            sl[s.rows] = np.where(np.isfinite(s.lb), np.maximum(s.lb - g[n], 0.0), 0.0)
            su[s.rows] = np.where(np.isfinite(s.ub), np.maximum(g[n] - s.ub, 0.0), 0.0)
        sl_full.append(sl)
        su_full.append(su)
    return sl_full, su_full


def objective(qp: OcpQp, x, u, sl=None, su=None):
    """Cost of a candidate trajectory. Slacks default to the minimal ones."""
    x0, stages = _normalize(qp)
    xs = [np.asarray(v, dtype=float) for v in x]
    us = [np.asarray(v, dtype=float) for v in u]
    c = _quad_cost(stages, xs, us)
    if sl is None or su is None:
        sl, su = _slacks(stages, xs, us)
    for n, s in enumerate(stages):
        a = np.asarray(sl[n], dtype=float)[s.rows]
        b = np.asarray(su[n], dtype=float)[s.rows]
        c += 0.5 * np.sum(s.zl * a**2) + 0.5 * np.sum(s.zu * b**2)
    return float(c)


def solve(qp: OcpQp, settings: SolverSettings | None = None, warm: dict | None = None):
    """Solve an :class:`OcpQp`.

    ``warm`` may contain ``"u"`` (list of inputs) and, for ADMM, ``"y"``
    (bound multipliers per stage in normalized-row layout).
    """
    settings = settings or SolverSettings()
    if settings.block_size and settings.block_size > 1 and qp.N > 1:
        cqp, blocks = condense(qp, settings.block_size)
        cwarm = None
        if warm and warm.get("u") is not None:
            cwarm = {"u": [np.concatenate(warm["u"][n0:n1]) for n0, n1 in blocks]}
        inner = SolverSettings(**{**settings.__dict__, "block_size": None})
        csol = solve(cqp, inner, cwarm)
        us = _expand_inputs(qp, blocks, csol.u)
        return _finish(qp, us, csol.status, csol.iterations, {"blocks": blocks})

    x0, stages = _normalize(qp)
    warm = warm or {}
    if settings.method == "newton":
        xs, us, status, it, info = _solve_newton(x0, stages, settings, warm.get("u"))
        if status != Status.OPTIMAL and qp.N <= settings.dense_fallback_max_n and qp.N > 1:
            dense = solve(qp, SolverSettings(**{**settings.__dict__, "block_size": qp.N}))
            dense.info["fallback"] = "dense"
            return dense
    elif settings.method == "admm":
        xs, us, status, it, info = _solve_admm(x0, stages, settings, warm)
    else:
        raise ValueError(f"unknown method {settings.method!r}")
    return _finish(qp, us, status, it, info, (x0, stages))


def _finish(qp, us, status, it, info, normalized=None):
    x0, stages = normalized or _normalize(qp)
    xs = _rollout(x0, stages, us)
    sl, su = _slacks(stages, xs, us)

    def diag(sol):
        res, lam, y = _kkt(x0, stages, sol)
        obj = _quad_cost(stages, xs, us) + sum(
            _penalty(g, s.lb, s.ub, s.zl, s.zu) for g, s in zip(_row_values(stages, xs, us), stages)
        )
        return {"kkt_residual": res, "lam": lam, "y": y, "objective": obj}

    return OcpSolution(x=xs, u=us, sl=sl, su=su, status=status, iterations=it, info=info,
                       _diag=diag)


def _kkt(x0, stages, sol):
    N = len(stages) - 1
    xs = [np.asarray(v, dtype=float) for v in sol.x]
    us = [np.asarray(v, dtype=float) for v in sol.u]
    if len(xs) != N + 1 or len(us) != N:
        raise DimensionMismatch("solution length does not match horizon")
    for n, s in enumerate(stages):
        if xs[n].shape[0] != s.Q.shape[0] or (n < N and us[n].shape[0] != s.R.shape[0]):
            raise DimensionMismatch(f"stage {n}: solution dimensions do not match")
        if len(sol.sl[n]) != s.m_full or len(sol.su[n]) != s.m_full:
            raise DimensionMismatch(f"stage {n}: slack dimensions do not match")
    g = _row_values(stages, xs, us)
    res = [np.max(np.abs(xs[0] - x0))]
    ys = []
    for n, s in enumerate(stages):
        sl = np.asarray(sol.sl[n], dtype=float)[s.rows]
        su = np.asarray(sol.su[n], dtype=float)[s.rows]
        mu_u = s.zu * su
        mu_l = s.zl * sl
        ys.append(mu_u - mu_l)
        if g[n].size:
            with np.errstate(invalid="ignore"):
                viol_u = np.where(np.isfinite(s.ub), g[n] - s.ub - su, -np.inf)
                viol_l = np.where(np.isfinite(s.lb), s.lb - sl - g[n], -np.inf)
            res.append(np.max(np.maximum(viol_u, 0.0)))
            res.append(np.max(np.maximum(viol_l, 0.0)))
            res.append(np.max(np.maximum(-sl, 0.0)))
            res.append(np.max(np.maximum(-su, 0.0)))
            with np.errstate(invalid="ignore"):
                res.append(np.max(np.abs(np.where(np.isfinite(viol_u), mu_u * viol_u, 0.0))))
                res.append(np.max(np.abs(np.where(np.isfinite(viol_l), mu_l * viol_l, 0.0))))
    lam = [None] * (N + 1)
    T = stages[N]
    lam[N] = T.Q @ xs[N] + T.q + T.C.T @ ys[N]
    for n in range(N - 1, -1, -1):
        s = stages[n]
        x, u = xs[n], us[n]
        res.append(np.max(np.abs(xs[n + 1] - (s.A @ x + s.B @ u + s.b))))
        if u.size:
            grad_u = s.R @ u + s.S @ x + s.r + s.D.T @ ys[n] + s.B.T @ lam[n + 1]
            res.append(np.max(np.abs(grad_u)))
        lam[n] = s.Q @ x + s.S.T @ u + s.q + s.C.T @ ys[n] + s.A.T @ lam[n + 1]
    return float(max(res)), lam, ys


def kkt_residual(qp: OcpQp, sol: OcpSolution) -> float:
    """Max-norm of stationarity, primal feasibility and complementarity residuals.

    Bound multipliers follow from slack stationarity (``mu = Z s``) and the
    costates from state stationarity, so only the input stationarity,
    dynamics, relaxed bounds and complementarity remain to be checked.
    """
    x0, stages = _normalize(qp)
    return _kkt(x0, stages, sol)[0]


class QpSolver:
    """Solver instance with warm-start memory for receding-horizon use."""

    def __init__(self, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        self.last: OcpSolution | None = None

    def solve(self, qp: OcpQp, warm: dict | None = None) -> OcpSolution:
        sol = solve(qp, self.settings, warm)
        self.last = sol
        return sol


def dump_qp(qp: OcpQp, fh):
    """Write a plain-text dump: one ``# stage n`` header per stage followed by
    ``name rows cols`` lines and the matrix rows."""
    x0, stages = _normalize(qp)

    def put(name, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        fh.write(f"{name} {M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")

    fh.write(f"# ocp_qp N={len(stages) - 1}\n")
    put("x0", x0[None, :])
    for n, s in enumerate(stages):
        fh.write(f"# stage {n}\n")
        for name in ("Q", "S", "R", "q", "r", "A", "B", "b", "C", "D", "lb", "ub", "zl", "zu"):
            M = getattr(s, name)
            if M is None:
                continue
            put(name, M[None, :] if np.ndim(M) == 1 else M)
