"""Dense barrier solver for log-affine semidefinite programs.

Problems have the form::

    maximize   sum_k a_k log(u_k(X)) + l(X)
    subject to g_j(X) >= 0,  e_i(X) == 0,  X_b >= 0 (PSD),  optional diag(X_b) == 1

where every map is affine in the Hermitian blocks ``X_b`` through the real
inner product ``<A, X> = Re Tr(A X)``.  The log terms are self-concordant,
so they sit inside the barrier objective

    t * f(X) + sum_j log g_j(X) + sum_b log det X_b

which is maximized with equality-constrained Newton steps for an
increasing sequence of ``t``.  The Newton system is reduced onto the
handful of affine functionals: with ``P(D) = X^{-1} D X^{-1}`` the step is
``D = X (grad + sum_a c_a L_a) X`` and only a small dense system in the
coefficients ``c`` has to be solved, so ``X^{-1}`` is never formed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


@dataclass
class Affine:
    """``const + sum_b <terms[b], X_b>``; term matrices must be Hermitian."""

    const: float = 0.0
    terms: dict[str, np.ndarray] = field(default_factory=dict)

    def __call__(self, X: dict[str, np.ndarray]) -> float:
        val = self.const
        for name, A in self.terms.items():
            val += float(np.real(np.vdot(A, X[name])))
        return val

    def __add__(self, other: "Affine") -> "Affine":
        terms = dict(self.terms)
        for name, A in other.terms.items():
            terms[name] = terms[name] + A if name in terms else A
        return Affine(self.const + other.const, terms)

    def __mul__(self, c: float) -> "Affine":
        return Affine(c * self.const, {k: c * v for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __neg__(self) -> "Affine":
        return self * -1.0

    def __sub__(self, other: "Affine") -> "Affine":
        return self + (-other)

    def shift(self, c: float) -> "Affine":
        return Affine(self.const + c, dict(self.terms))


def ge(expr: Affine, bound: float) -> Affine:
    """Constraint ``expr >= bound`` as an affine map that must stay non-negative."""
    return expr.shift(-bound)


def le(expr: Affine, bound: float) -> Affine:
    return (-expr).shift(bound)


@dataclass
class LogAffineSDP:
    """A concave maximization over Hermitian PSD blocks.

    ``ineq_constraints`` hold maps that must be ``>= 0`` and
    ``eq_constraints`` maps that must be ``== 0`` (use :func:`ge` and
    :func:`le` to build them from bounds).
    """

    blocks: list[tuple[str, int]]
    log_terms: list[tuple[float, Affine]] = field(default_factory=list)
    linear_obj: Affine = field(default_factory=Affine)
    ineq_constraints: list[Affine] = field(default_factory=list)
    eq_constraints: list[Affine] = field(default_factory=list)
    fixed_diag: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        dims = dict(self.blocks)
        maps = [a for _, a in self.log_terms] + [self.linear_obj]
        maps += self.ineq_constraints + self.eq_constraints
        for a in maps:
            for name, A in a.terms.items():
                if name not in dims:
                    raise ValueError(f"unknown block {name!r}")
                if A.shape != (dims[name], dims[name]):
                    raise ValueError(f"coefficient for {name!r} has shape {A.shape}")
                if not np.allclose(A, A.conj().T, atol=1e-12 * max(1.0, np.abs(A).max())):
                    raise ValueError(f"coefficient for {name!r} is not Hermitian")
        for w, _ in self.log_terms:
            if w <= 0:
                raise ValueError("log-term weights must be positive")

    def objective(self, X: dict[str, np.ndarray]) -> float:
        val = self.linear_obj(X)
        for w, a in self.log_terms:
            u = a(X)
            val += w * np.log(u) if u > 0 else -np.inf
        return float(val)

    def residuals(self, X: dict[str, np.ndarray]) -> float:
        """Largest violation over equalities, inequalities, fixed diagonals and PSD-ness."""
        res = 0.0
        for a in self.eq_constraints:
            res = max(res, abs(a(X)))
        for a in self.ineq_constraints:
            res = max(res, -a(X))
        for name, n in self.blocks:
            Xb = X[name]
            if self.fixed_diag.get(name):
                res = max(res, float(np.max(np.abs(np.diag(Xb).real - 1.0))))
            res = max(res, -float(np.linalg.eigvalsh(Xb).min()))
        return res


@dataclass
class SolverReport:
    status: str
    objective: float
    primal_residual: float
    stationarity: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def usable(self) -> bool:
        """Optimal, or stalled late with a feasible point and a small gap."""
        return self.status == "optimal" or (self.status == "inaccurate" and self.stationarity <= 1e-4)


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    stat: float = 1e-7


# ---------------------------------------------------------------------------
# real embedding


def hermitian_to_real_embedding(H: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``, a real symmetric matrix of twice the size."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(H, H.conj().T, atol=1e-12 * max(1.0, np.abs(H).max(initial=0.0))):
        raise ValueError("matrix is not Hermitian")
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def real_embedding_to_hermitian(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    n = S.shape[0] // 2
    if S.shape != (2 * n, 2 * n):
        raise ValueError("expected an even-sized square matrix")
    return S[:n, :n] + 1j * S[n:, :n]


# ---------------------------------------------------------------------------
# compiled form


class _Compiled:
    """Functionals stacked per block; index layout [diag | eq | log | ineq | lin]."""

    def __init__(self, p: LogAffineSDP):
        self.p = p
        self.names = [b for b, _ in p.blocks]
        self.sizes = [n for _, n in p.blocks]
        maps = list(p.eq_constraints) + [a for _, a in p.log_terms]
        maps += list(p.ineq_constraints) + [p.linear_obj]
        self.n_eq = len(p.eq_constraints)
        self.n_log = len(p.log_terms)
        self.n_ineq = len(p.ineq_constraints)
        self.n_gen = len(maps)
        self.log_w = np.array([w for w, _ in p.log_terms], dtype=float)
        self.mats = []
        for name, n in p.blocks:
            L = np.zeros((self.n_gen, n, n), complex)
            for f, a in enumerate(maps):
                if name in a.terms:
                    L[f] = a.terms[name]
            self.mats.append(L)
        self.diag_slices = []
        off = 0
        for name, n in p.blocks:
            if p.fixed_diag.get(name):
                self.diag_slices.append(slice(off, off + n))
                off += n
            else:
                self.diag_slices.append(None)
        self.n_diag = off
        gen_const = np.array([a.const for a in maps], dtype=float)
        self.const = np.concatenate([-np.ones(self.n_diag), gen_const])
        nd = self.n_diag
        self.i_eq = np.arange(0, nd + self.n_eq)
        self.i_log = np.arange(nd + self.n_eq, nd + self.n_eq + self.n_log)
        start = nd + self.n_eq + self.n_log
        self.i_ineq = np.arange(start, start + self.n_ineq)
        self.i_lin = nd + self.n_gen - 1
        self.i_v = np.concatenate([self.i_log, self.i_ineq])
        self.n_tot = nd + self.n_gen
        self.dim = sum(self.sizes)
        # barrier parameter: log det per block plus one per inequality
        self.nu = float(self.dim + self.n_ineq)

    def eq_residual(self, X: list[np.ndarray]) -> float:
        res = 0.0
        for Xb, sl in zip(X, self.diag_slices):
            if sl is not None:
                res = max(res, float(np.max(np.abs(np.diag(Xb).real - 1.0))))
        Xd = dict(zip(self.names, X))
        for a in self.p.eq_constraints:
            res = max(res, abs(a(Xd)))
        return res

    def geometry(self, X: list[np.ndarray]):
        """Quantities in the scaled coordinates ``X_b = R_b R_b^H``.

        Returns the Cholesky factors, the scaled functionals
        ``R^H L_a R``, functional values ``h_a = <L_a, X>`` and the Gram
        matrix ``<L_a, X L_b X>``.  Working with ``R^H L R`` keeps the
        directions where ``X`` is nearly singular at relative accuracy.
        """
        nd = self.n_diag
        h = np.zeros(self.n_tot)
        G = np.zeros((self.n_tot, self.n_tot))
        Rs, Ls, rows = [], [], []
        for Xb, L, sl in zip(X, self.mats, self.diag_slices):
            R = np.linalg.cholesky(Xb)
            Lt = np.matmul(np.matmul(R.conj().T, L), R)
            Lt = 0.5 * (Lt + np.conj(np.swapaxes(Lt, 1, 2)))
            Rs.append(R)
            Ls.append(Lt)
            flat = Lt.reshape(len(Lt), -1)
            h[nd:] += np.real(np.trace(Lt, axis1=1, axis2=2))
            G[nd:, nd:] += np.real(flat.conj() @ flat.T)
            if sl is not None:
                # scaled diagonal functional i is r_i r_i^H with r_i = R^H e_i
                r = R.conj().T
                rows.append(r)
                h[sl] = np.real(np.diag(Xb))
                G[sl, sl] = np.abs(Xb) ** 2
                cross = np.real(np.sum(r.conj()[None] * np.matmul(Lt, r), axis=1))
                G[nd:, sl] = cross
                G[sl, nd:] = cross.T
            else:
                rows.append(None)
        return Rs, Ls, rows, h, G

    def scaled_step(self, Ls, rows, c):
        """``Delta_b = I + sum_a c_a R^H L_a R`` for each block."""
        nd = self.n_diag
        out = []
        for Lt, r, sl in zip(Ls, rows, self.diag_slices):
            n = Lt.shape[1]
            Dt = np.eye(n, dtype=complex) + np.tensordot(c[nd:], Lt, axes=1)
            if sl is not None:
                Dt = Dt + (r * c[sl]) @ r.conj().T
            out.append(0.5 * (Dt + Dt.conj().T))
        return out

    def step_values(self, Ls, rows, Dts):
        """Functional values ``<L_a, D>`` of the step ``D = R Delta R^H``."""
        nd = self.n_diag
        d = np.zeros(self.n_tot)
        for Lt, r, sl, Dt in zip(Ls, rows, self.diag_slices, Dts):
            d[nd:] += np.real(Lt.reshape(len(Lt), -1).conj() @ Dt.ravel())
            if sl is not None:
                d[sl] = np.real(np.sum(r.conj() * (Dt @ r), axis=0))
        return d


def _logdet(X: list[np.ndarray]) -> float | None:
    total = 0.0
    for Xb in X:
        try:
            C = np.linalg.cholesky(Xb)
        except np.linalg.LinAlgError:
            return None
        d = np.real(np.diag(C))
        if np.any(d <= 0):
            return None
        total += 2.0 * np.sum(np.log(d))
    return total


def _unscale(R: np.ndarray, Dt: np.ndarray) -> np.ndarray:
    D = R @ Dt @ R.conj().T
    return 0.5 * (D + D.conj().T)


def _solve_kkt(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.maximum(np.abs(np.diag(K)), 1e-300))
    Ks = K / scale[:, None] / scale[None, :]
    bs = rhs / scale
    try:
        # late barrier stages are ill-conditioned by construction
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            z = scipy.linalg.solve(Ks, bs, assume_a="pos", check_finite=True)
    except (np.linalg.LinAlgError, ValueError):
        z = np.linalg.lstsq(Ks, bs, rcond=1e-14)[0]
    return z / scale


class _Barrier:
    def __init__(self, cp: _Compiled, tol: Tolerances, max_iter: int, mu: float = 8.0,
                 center_iter: int = 100):
        self.cp = cp
        self.center_iter = center_iter
        self.tol = tol
        self.max_iter = max_iter
        self.mu = mu
        self.iters = 0

    def values(self, h):
        return self.cp.const + h

    def newton(self, X, t):
        """Newton step at ``X`` for parameter ``t``.

        Returns the scaled step ``Delta`` per block, the Cholesky factors,
        the functional values ``d`` of the step, the current values and
        the directional derivative of the barrier objective.
        """
        cp = self.cp
        Rs, Ls, rows, h, G = cp.geometry(X)
        val = self.values(h)
        iE, iV, ilog, iineq, il = cp.i_eq, cp.i_v, cp.i_log, cp.i_ineq, cp.i_lin
        u = val[ilog]
        g = val[iineq]
        gamma = np.concatenate([t * cp.log_w / u, 1.0 / g])
        w = np.concatenate([t * cp.log_w / u**2, 1.0 / g**2])
        r = -val[iE]
        b_E = h[iE] + G[np.ix_(iE, iV)] @ gamma + t * G[iE, il]
        b_V = h[iV] + G[np.ix_(iV, iV)] @ gamma + t * G[iV, il]
        nE, nV = len(iE), len(iV)
        K = np.zeros((nE + nV, nE + nV))
        K[:nE, :nE] = G[np.ix_(iE, iE)]
        K[:nE, nE:] = G[np.ix_(iE, iV)]
        K[nE:, :nE] = G[np.ix_(iV, iE)]
        K[nE:, nE:] = G[np.ix_(iV, iV)] + np.diag(1.0 / w)
        rhs = np.concatenate([r - b_E, -b_V])
        z = _solve_kkt(K, rhs) if nE + nV else np.zeros(0)
        c = np.zeros(cp.n_tot)
        c[iE] = z[:nE]
        c[iV] = gamma + z[nE:]
        c[il] = t
        Dts = cp.scaled_step(Ls, rows, c)
        d = cp.step_values(Ls, rows, Dts)
        if nE:
            # rounding in the large coefficients leaves an O(eps * t) error
            # along the equality normals; project it out in the X metric
            mu = _solve_kkt(G[np.ix_(iE, iE)], d[iE] - r)
            corr = np.zeros(cp.n_tot)
            corr[iE] = -mu
            Dts = [Dt + E - np.eye(Dt.shape[0])
                   for Dt, E in zip(Dts, cp.scaled_step(Ls, rows, corr))]
            d = cp.step_values(Ls, rows, Dts)
        dpsi = t * (np.sum(cp.log_w * d[ilog] / u) + d[il]) + np.sum(d[iineq] / g)
        dpsi += sum(np.trace(Dt).real for Dt in Dts)
        return Dts, Rs, d, val, dpsi

    def psi_delta(self, X, Dts, Rs, d, val, t, s):
        """Change of the barrier objective along the step, or None outside the domain."""
        cp = self.cp
        ilog, iineq, il = cp.i_log, cp.i_ineq, cp.i_lin
        ru = s * d[ilog] / val[ilog]
        rg = s * d[iineq] / val[iineq]
        if np.any(ru <= -1) or np.any(rg <= -1):
            return None
        ld = _logdet([np.eye(Dt.shape[0]) + s * Dt for Dt in Dts])
        if ld is None:
            return None
        return t * (np.sum(cp.log_w * np.log1p(ru)) + s * d[il]) + np.sum(np.log1p(rg)) + ld

    def center(self, X, t, stop: Callable | None = None):
        """Newton iterations at fixed ``t``; returns (X, converged, stopped)."""
        cp = self.cp
        for _ in range(self.center_iter):
            if self.iters >= self.max_iter:
                return X, False, False
            self.iters += 1
            Dts, Rs, d, val, dpsi = self.newton(X, t)
            eq_res = np.max(np.abs(val[cp.i_eq]), initial=0.0)
            infeasible = eq_res > 0.1 * self.tol.feas
            if not infeasible and dpsi / 2 <= 1e-10:
                return X, True, False
            # largest step keeping affine barrier arguments positive
            s = 1.0
            lim = np.concatenate([d[cp.i_log] / val[cp.i_log], d[cp.i_ineq] / val[cp.i_ineq]])
            neg = lim < 0
            if np.any(neg):
                s = min(1.0, 0.99 / np.max(-lim[neg]))
            # with an equality residual this is an infeasible-start step and
            # only the barrier domain limits it
            Ds = [_unscale(R, Dt) for R, Dt in zip(Rs, Dts)]
            accepted = False
            while s > 1e-14:
                delta = self.psi_delta(X, Dts, Rs, d, val, t, s)
                if delta is not None and (infeasible or delta >= 0.01 * s * dpsi):
                    Xn = [Xb + s * Db for Xb, Db in zip(X, Ds)]
                    # the scaled test can pass while rounding in the
                    # unscaled update costs definiteness
                    if _logdet(Xn) is not None:
                        accepted = True
                        break
                s *= 0.5
            if not accepted or s < 1e-8:
                return X, dpsi / 2 <= 1e-6, False
            X = Xn
            if stop is not None and stop(X):
                return X, True, True
            if s == 1.0 and dpsi / 2 <= 1e-10 and not infeasible:
                return X, True, False
        return X, False, False

    def run(self, X, t0: float = 1.0, stop: Callable | None = None, gap_target=None):
        cp = self.cp
        t = t0
        gap_target = self.tol.stat if gap_target is None else gap_target
        good = None
        while True:
            Xc, ok, stopped = self.center(X, t, stop)
            if stopped:
                return Xc, "stopped", cp.nu / t
            if ok and good is not None and cp.eq_residual(Xc) > self.tol.feas:
                ok = False
            if not ok:
                # keep the last well-centred point rather than a drifted one
                if good is None:
                    return Xc, "numerical_failure", cp.nu / t
                return good[0], "inaccurate", good[1]
            X = Xc
            gap = cp.nu / t
            good = (X, gap)
            if self.iters >= self.max_iter:
                return X, "max_iter", gap
            if gap <= gap_target:
                return X, "optimal", gap
            t = min(t * self.mu, cp.nu / gap_target)


def _as_list(p: LogAffineSDP, X: dict[str, np.ndarray]) -> list[np.ndarray]:
    return [np.asarray(X[name], dtype=complex) for name, _ in p.blocks]


def _as_dict(p: LogAffineSDP, X: list[np.ndarray]) -> dict[str, np.ndarray]:
    return {name: Xb for (name, _), Xb in zip(p.blocks, X)}


def _interior_start(p: LogAffineSDP, x0: dict[str, np.ndarray] | None, shrink: float):
    X = []
    for name, n in p.blocks:
        fixed = p.fixed_diag.get(name)
        if x0 is not None and name in x0:
            Xb = 0.5 * (x0[name] + x0[name].conj().T)
            ref = 1.0 if fixed else max(np.trace(Xb).real / n, 1e-12)
            Xb = (1.0 - shrink) * Xb + shrink * ref * np.eye(n)
        else:
            Xb = np.eye(n, dtype=complex)
        X.append(np.asarray(Xb, dtype=complex))
    return X


def _barrier_values(p: LogAffineSDP, X: dict[str, np.ndarray]) -> np.ndarray:
    vals = [a(X) for _, a in p.log_terms] + [a(X) for a in p.ineq_constraints]
    return np.array(vals, dtype=float)


def _phase_one(p: LogAffineSDP, X0: list[np.ndarray], tol: Tolerances, max_iter: int):
    """Find a point with all log arguments and inequalities strictly positive.

    Maximizes ``s`` subject to ``g_j(X) >= s`` (``s`` carried as a shifted 1x1
    PSD block) and stops at the first iterate with ``s > 0``.
    """
    Xd = _as_dict(p, X0)
    vals = _barrier_values(p, Xd)
    # the margin scales with the worst value so the start stays interior after rounding
    s0 = float(vals.min()) - 1.0 - 0.1 * abs(float(vals.min())) if vals.size else 0.0
    shift = max(0.0, -s0) + 1.0
    name = "__phase_one"
    one = np.ones((1, 1))
    cons = []
    for a in [a for _, a in p.log_terms] + list(p.ineq_constraints):
        cons.append(a + Affine(shift, {name: -one}))
    cons.append(Affine(shift + 1.0, {name: -one}))
    aux = LogAffineSDP(
        blocks=list(p.blocks) + [(name, 1)],
        linear_obj=Affine(0.0, {name: one}),
        ineq_constraints=cons,
        eq_constraints=list(p.eq_constraints),
        fixed_diag=dict(p.fixed_diag),
    )
    start = list(X0) + [np.array([[s0 + shift]], dtype=complex)]
    cp = _Compiled(aux)
    bar = _Barrier(cp, tol, max_iter)

    def feasible(X):
        return X[-1][0, 0].real - shift > 0

    X, status, _ = bar.run(start, t0=1.0, stop=feasible, gap_target=1e-9)
    if status == "stopped" or feasible(X):
        return X[:-1], bar.iters
    return None, bar.iters


def solve(
    p: LogAffineSDP,
    tol: Tolerances | dict | None = None,
    max_iter: int = 2000,
    x0: dict[str, np.ndarray] | None = None,
    t0: float = 1.0,
):
    """Maximize ``p``; returns the block values and a :class:`SolverReport`.

    ``x0`` is an optional feasible hint (it may lie on the boundary of the
    PSD cone or of the inequalities); it is pulled slightly into the
    interior, and a phase-one search runs if that is not enough.
    """
    if tol is None:
        tol = Tolerances()
    elif isinstance(tol, dict):
        tol = Tolerances(**tol)
    X0 = None
    for shrink in (1e-3, 1e-2, 0.1, 0.5):
        cand = _interior_start(p, x0, shrink)
        if _logdet(cand) is None:
            continue
        # a hair above zero is not interior once the compiled form rounds differently
        if np.all(_barrier_values(p, _as_dict(p, cand)) > 1e-9):
            X0 = cand
            break
        if x0 is None:
            break
    iters = 0
    if X0 is None:
        cand = _interior_start(p, x0, 1e-2)
        if _logdet(cand) is None:
            cand = _interior_start(p, None, 0.0)
        X0, iters = _phase_one(p, cand, tol, max_iter)
        if X0 is None:
            Xd = _as_dict(p, cand)
            return Xd, SolverReport("infeasible", p.objective(Xd), p.residuals(Xd), np.inf, iters)
    cp = _Compiled(p)
    bar = _Barrier(cp, tol, max_iter)
    bar.iters = iters
    X, status, gap = bar.run(X0, t0=t0)
    Xd = {name: 0.5 * (Xb + Xb.conj().T) for name, Xb in _as_dict(p, X).items()}
    res = p.residuals(Xd)
    if status in ("optimal", "inaccurate") and res > tol.feas:
        status = "numerical_failure"
    report = SolverReport(status, p.objective(Xd), res, gap, bar.iters)
    log.debug("solve: %s", report)
    return Xd, report


# ---------------------------------------------------------------------------
# problem dump


def _fmt_matrix(A: np.ndarray) -> str:
    return " ".join(f"{z.real:.17g} {z.imag:.17g}" for z in np.asarray(A).ravel())


def dump_problem(p: LogAffineSDP) -> str:
    """Plain-text dump of ``p``; one record per line (see docs/formats.md)."""
    lines = ["# log-affine-sdp v1"]
    for name, n in p.blocks:
        lines.append(f"block {name} {n} fixed_diag={int(bool(p.fixed_diag.get(name)))}")

    def affine(kind: str, a: Affine, extra: str = "") -> str:
        parts = [kind + extra, f"const {a.const:.17g}"]
        for name, A in a.terms.items():
            parts.append(f"{name}: {_fmt_matrix(A)}")
        return " | ".join(parts)

    for w, a in p.log_terms:
        lines.append(affine("log", a, f" {w:.17g}"))
    lines.append(affine("linear", p.linear_obj))
    for a in p.ineq_constraints:
        lines.append(affine("ge0", a))
    for a in p.eq_constraints:
        lines.append(affine("eq0", a))
    return "\n".join(lines) + "\n"
