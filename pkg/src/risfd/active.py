"""Active beamforming: Dinkelbach ratio, DC split and the lifted subproblem.

With ``W_s = w_s w_s^H`` each link rate splits into a difference of
concave functions of the Gram matrices,

    R_i = log2(Tr(F_i W_tx) + Tr(F_ii W_rx) + s_i^2) - log2(Tr(F_ii W_rx) + s_i^2)
        =            f1_i(W)                       -        f2_i(W)

and ``f2`` is replaced by its tangent plane (a global upper bound, since it
is concave).  The subtractive Dinkelbach objective ``f1 - f2' - alpha P``
is then concave and handed to :mod:`risfd.solver` with the rank-one
constraints dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .model import (
    LINK_ENDS,
    LN2,
    BeamPair,
    GramPair,
    InfeasibleError,
    Lifts,
    RecoveryError,
    Scenario,
    build_lifts,
    effective_channel,
    hermitianize,
)
from .solver import Affine, LogAffineSDP, SolverReport, Tolerances, ge, le, solve

log = logging.getLogger(__name__)

RANK_ONE_TOL = 1e-5


def block_name(s: int) -> str:
    return f"W{s}"


def grams_dict(grams: GramPair, sources) -> dict[str, np.ndarray]:
    return {block_name(s): grams[s] for s in sources}


@dataclass
class ActiveIterate:
    grams: GramPair
    alpha: float = 0.0
    objective_trace: list[float] = field(default_factory=list)
    reports: list[SolverReport] = field(default_factory=list)
    # set when a solve was rejected and the previous grams kept
    held: bool = False


# ---------------------------------------------------------------------------
# DC pieces


def _link_terms(sc: Scenario, lifts: Lifts, i: int):
    tx, rx = LINK_ENDS[i]
    return tx, rx, lifts.signal(i), lifts.si(i), sc.sys.noise_power[i - 1]


def _tr(A: np.ndarray, B: np.ndarray) -> float:
    return float(np.real(np.vdot(A, B)))


def f1_value(grams: GramPair, sc: Scenario, lifts: Lifts) -> float:
    val = 0.0
    for i in sc.links:
        tx, rx, F, Fsi, s2 = _link_terms(sc, lifts, i)
        val += np.log2(_tr(F, grams[tx]) + _tr(Fsi, grams[rx]) + s2)
    return sc.time_share * float(val)


def f2_value(grams: GramPair, sc: Scenario, lifts: Lifts) -> float:
    val = 0.0
    for i in sc.links:
        tx, rx, F, Fsi, s2 = _link_terms(sc, lifts, i)
        val += np.log2(_tr(Fsi, grams[rx]) + s2)
    return sc.time_share * float(val)


def f2_linearization(grams_t: GramPair, sc: Scenario, lifts: Lifts) -> Affine:
    """Tangent plane of ``f2`` at ``grams_t`` over blocks ``W1``/``W2``.

    The SI term of a link only depends on the receiving source's Gram
    matrix, so the gradient is ``F_ii / ((Tr(F_ii W_rx) + s^2) ln 2)``.
    """
    terms: dict[str, np.ndarray] = {}
    const = 0.0
    for i in sc.links:
        tx, rx, F, Fsi, s2 = _link_terms(sc, lifts, i)
        d = _tr(Fsi, grams_t[rx]) + s2
        grad = sc.time_share * Fsi / (d * LN2)
        const += sc.time_share * np.log2(d) - _tr(grad, grams_t[rx])
        name = block_name(rx)
        terms[name] = terms[name] + grad if name in terms else grad
    n = lifts.F1.shape[0]
    for s in (1, 2):
        terms.setdefault(block_name(s), np.zeros((n, n), complex))
    return Affine(float(const), terms)


def lifted_rate(grams: GramPair, sc: Scenario, theta) -> float:
    lifts = build_lifts(sc.ch, theta)
    return f1_value(grams, sc, lifts) - f2_value(grams, sc, lifts)


def dinkelbach_alpha(grams: GramPair, sc: Scenario, theta) -> float:
    """Current ratio ``R(W) / P_tot(W)``."""
    return lifted_rate(grams, sc, theta) / sc.power(grams)


# ---------------------------------------------------------------------------
# the convex subproblem


def build_p3(sc: Scenario, theta, alpha: float, grams_t: GramPair, lifts: Lifts | None = None):
    """Lifted subtractive problem at the expansion point ``grams_t``.

    Returns the :class:`LogAffineSDP` whose objective equals
    ``f1(W) - f2'(W | W_t) - alpha P_tot(W)`` exactly (in bits).  Log
    arguments are normalized by the noise power; the offset goes into the
    constant of the linear part.
    """
    if lifts is None:
        lifts = build_lifts(sc.ch, theta)
    n = sc.sys.n_tx
    blocks = [(block_name(s), n) for s in sc.sources]
    active = {name for name, _ in blocks}
    tau = sc.time_share

    def restrict(a: Affine) -> Affine:
        return Affine(a.const, {k: v for k, v in a.terms.items() if k in active})

    log_terms = []
    cons = []
    const = 0.0
    for i in sc.links:
        tx, rx, F, Fsi, s2 = _link_terms(sc, lifts, i)
        terms = {block_name(tx): F / s2, block_name(rx): Fsi / s2}
        log_terms.append((tau / LN2, restrict(Affine(1.0, terms))))
        const += tau * np.log2(s2)
        gamma = sc.sinr_target(i)
        if gamma > 0:
            if not np.any(F):
                raise InfeasibleError(f"link {i} has no signal path but demands a positive rate")
            expr = Affine(0.0, {block_name(tx): F / s2, block_name(rx): -gamma * Fsi / s2})
            cons.append(ge(restrict(expr), gamma))
    for s in sc.sources:
        cons.append(le(Affine(0.0, {block_name(s): np.eye(n)}), sc.sys.p_max[s - 1]))

    f2lin = f2_linearization(grams_t, sc, lifts)
    power = Affine(sc.static_power, {block_name(s): sc.power_coef * np.eye(n) for s in sc.sources})
    linear = Affine(const) - restrict(f2lin) - alpha * power
    return LogAffineSDP(blocks=blocks, log_terms=log_terms, linear_obj=linear, ineq_constraints=cons)


def p3_value(grams: GramPair, sc: Scenario, theta, alpha: float, grams_t: GramPair) -> float:
    lifts = build_lifts(sc.ch, theta)
    f2lin = f2_linearization(grams_t, sc, lifts)
    return (
        f1_value(grams, sc, lifts)
        - f2lin(grams_dict(grams, (1, 2)))
        - alpha * sc.power(grams)
    )


def _from_blocks(X: dict[str, np.ndarray], n: int) -> GramPair:
    z = np.zeros((n, n), complex)
    return GramPair(
        hermitianize(X.get("W1", z)),
        hermitianize(X.get("W2", z)),
    )


def active_step(
    it: ActiveIterate,
    sc: Scenario,
    theta,
    *,
    alpha: float | None = None,
    tol: Tolerances | None = None,
    repeats: int = 1,
) -> ActiveIterate:
    """Update the ratio, solve the lifted subproblem and return the new iterate.

    ``alpha`` pins the ratio (zero gives the sum-rate scheme).  A solve whose
    result is worse than the incoming point, infeasible, or not converged is
    rejected and the incoming grams are kept.
    """
    grams = it.grams
    trace = list(it.objective_trace)
    reports = list(it.reports)
    held = False
    a = it.alpha
    for _ in range(repeats):
        a = dinkelbach_alpha(grams, sc, theta) if alpha is None else alpha
        p = build_p3(sc, theta, a, grams)
        X, rep = solve(p, tol, x0=grams_dict(grams, sc.sources))
        reports.append(rep)
        if rep.status == "infeasible":
            raise InfeasibleError("rate demands cannot be met for the current phases")
        cand = _from_blocks(X, sc.sys.n_tx)
        old_val = p3_value(grams, sc, theta, a, grams)
        new_val = p3_value(cand, sc, theta, a, grams)
        if rep.usable and new_val >= old_val and sc.feasible(cand, theta):
            grams = cand
            trace.append(new_val)
        else:
            log.debug("active step rejected: %s, %.3g -> %.3g", rep.status, old_val, new_val)
            held = True
            trace.append(old_val)
    return ActiveIterate(grams, a, trace, reports, held)


def dinkelbach(
    grams: GramPair,
    sc: Scenario,
    theta,
    *,
    tol: Tolerances | None = None,
    eps: float = 1e-4,
    max_iter: int = 30,
) -> ActiveIterate:
    """Run active steps at fixed phases until the ratio stops increasing."""
    it = ActiveIterate(grams, dinkelbach_alpha(grams, sc, theta))
    for _ in range(max_iter):
        prev = dinkelbach_alpha(it.grams, sc, theta)
        it = active_step(it, sc, theta, tol=tol)
        cur = dinkelbach_alpha(it.grams, sc, theta)
        if it.held or (cur - prev) / max(prev, 1e-12) < eps:
            break
    it.alpha = dinkelbach_alpha(it.grams, sc, theta)
    return it


# ---------------------------------------------------------------------------
# rank-one recovery


def principal(W: np.ndarray) -> tuple[np.ndarray, float]:
    """``sqrt(mu_1) v_1`` and the ratio ``mu_2 / mu_1``."""
    vals, vecs = np.linalg.eigh(W)
    mu1 = max(vals[-1], 0.0)
    if mu1 <= 0:
        return np.zeros(W.shape[0], complex), 0.0
    ratio = max(vals[-2], 0.0) / mu1 if len(vals) > 1 else 0.0
    return np.sqrt(mu1) * vecs[:, -1], float(ratio)


def _best_common_scale(sc: Scenario, theta, cands: dict[int, np.ndarray], objective: str = "ee"):
    """Scale each candidate pair by a common factor to maximize EE (or rate).

    Scaling both beams by ``c`` raises every SINR, so each candidate has a
    closed-form smallest feasible ``c`` and a largest one from the power
    caps.  Returns ``(score, index, c)`` of the best feasible candidate or
    ``None`` when no candidate can be made feasible.
    """
    count = next(iter(cands.values())).shape[0]
    zero = np.zeros((count, sc.sys.n_tx), complex)
    w = {s: cands.get(s, zero) for s in (1, 2)}
    powers = {s: np.sum(np.abs(w[s]) ** 2, axis=1) for s in sc.sources}
    p_sum = sum(powers.values())
    c_hi = np.full(count, np.inf)
    for s in sc.sources:
        safe = np.where(powers[s] > 0, powers[s], 1.0)
        c_hi = np.minimum(c_hi, np.where(powers[s] > 0, sc.sys.p_max[s - 1] / safe, np.inf))
    c_lo = np.zeros(count)
    a, b, s2 = {}, {}, {}
    for i in sc.links:
        tx, rx = LINK_ENDS[i]
        direct, ris_rx, tx_ris, si = sc.ch.link(i)
        g = effective_channel(direct, ris_rx, tx_ris, theta)
        a[i] = np.abs(w[tx] @ g) ** 2
        b[i] = np.abs(w[rx] @ si.conj()) ** 2
        s2[i] = sc.sys.noise_power[i - 1]
        gamma = sc.sinr_target(i)
        if gamma > 0:
            margin = a[i] - gamma * b[i]
            safe = np.where(margin > 0, margin, 1.0)
            need = np.where(margin > 0, gamma * s2[i] / safe, np.inf)
            c_lo = np.maximum(c_lo, need * (1 + 1e-9))
    ok = np.isfinite(c_hi) & (c_lo <= c_hi)
    if not np.any(ok):
        return None
    idx = np.flatnonzero(ok)
    a = {i: v[idx, None] for i, v in a.items()}
    b = {i: v[idx, None] for i, v in b.items()}
    p_sum = p_sum[idx, None]
    hi = c_hi[idx]
    lo = np.maximum(c_lo[idx], hi * 1e-8)

    def rate(c, k=slice(None)):
        return sc.time_share * sum(np.log2(1 + c * a[i][k] / (c * b[i][k] + s2[i])) for i in sc.links)

    def ee(c, k=slice(None)):
        return rate(c, k) / (sc.power_coef * c * p_sum[k] + sc.static_power)

    if objective == "rate":
        # every SINR grows with c, so the caps bind
        vals = rate(hi[:, None])[:, 0]
        k = int(np.argmax(vals))
        return float(vals[k]), int(idx[k]), float(hi[k])

    t = np.linspace(0.0, 1.0, 33)[None, :]
    cs = np.exp(np.log(lo)[:, None] * (1 - t) + np.log(hi)[:, None] * t)
    vals = ee(cs)
    k, j = np.unravel_index(np.argmax(vals), vals.shape)
    jl, jh = max(j - 1, 0), min(j + 1, cs.shape[1] - 1)
    best_c, best = float(cs[k, j]), float(vals[k, j])
    if jh > jl:
        res = scipy.optimize.minimize_scalar(
            lambda x: -float(ee(np.exp(x), slice(k, k + 1))[0, 0]),
            bounds=(np.log(cs[k, jl]), np.log(cs[k, jh])),
            method="bounded",
            options={"xatol": 1e-12},
        )
        c = float(np.clip(np.exp(res.x), lo[k], hi[k]))
        val = float(ee(c, slice(k, k + 1))[0, 0])
        if val > best:
            best_c, best = c, val
    return best, int(idx[k]), best_c


@dataclass
class Recovery:
    beams: BeamPair
    method: str  # "eig" | "randomization"
    lifted_ee: float
    ee: float
    rank_ratio: dict[int, float]


def recover_pair(
    grams: GramPair,
    sc: Scenario,
    theta,
    n_rand: int = 1000,
    rng: np.random.Generator | None = None,
    rank_tol: float = RANK_ONE_TOL,
    objective: str = "ee",
) -> Recovery:
    """Recover ``(w1, w2)`` from relaxed Gram matrices.

    Numerically rank-one grams give the principal eigenvectors directly.
    Otherwise Gaussian samples with covariance ``W_s`` are drawn (rank-one
    sources keep their eigenvector); every candidate, together with the
    eigenvector pair, is rescaled by the EE-best common factor that keeps
    both rate demands and both power caps, and the best is returned.
    ``objective="rate"`` ranks candidates by sum rate instead of EE.
    """
    n = sc.sys.n_tx
    lifted = sc.ee(grams, theta)
    eig = {s: principal(grams[s]) for s in sc.sources}
    ratios = {s: r for s, (_, r) in eig.items()}
    w0 = {s: eig[s][0] for s in (1, 2) if s in eig}
    beams0 = BeamPair(w0.get(1, np.zeros(n, complex)), w0.get(2, np.zeros(n, complex)))
    if all(r <= rank_tol for r in ratios.values()) and sc.feasible(beams0, theta):
        return Recovery(beams0, "eig", lifted, sc.ee(beams0, theta), ratios)

    rng = np.random.default_rng(0) if rng is None else rng
    cands = {}
    for s in sc.sources:
        if ratios[s] <= rank_tol or n_rand == 0:
            cands[s] = np.repeat(w0[s][None, :], n_rand + 1, axis=0)
            continue
        vals, vecs = np.linalg.eigh(grams[s])
        L = vecs * np.sqrt(np.maximum(vals, 0.0))
        z = (rng.standard_normal((n_rand, n)) + 1j * rng.standard_normal((n_rand, n))) / np.sqrt(2)
        cands[s] = np.vstack([w0[s][None, :], z @ L.T])
    found = _best_common_scale(sc, theta, cands, objective)
    if found is None:
        raise RecoveryError("no feasible beamformer among the randomization candidates")
    _, k, c = found
    ws = {s: np.sqrt(c) * cands[s][k] for s in sc.sources}
    beams = BeamPair(ws.get(1, np.zeros(n, complex)), ws.get(2, np.zeros(n, complex)))
    return Recovery(beams, "eig" if k == 0 else "randomization", lifted, sc.ee(beams, theta), ratios)


def recover_beamformer(
    grams: GramPair,
    sc: Scenario,
    theta,
    source: int,
    n_rand: int = 1000,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Beamformer of one source from the joint recovery."""
    return recover_pair(grams, sc, theta, n_rand, rng).beams[source]
