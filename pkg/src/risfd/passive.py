"""Passive beamforming: lifted phase problem with a rank-one penalty.

The RIS phases enter the rates through ``Q = q q^H`` with
``q = [e^{-j theta}, 1]``.  Dropping rank one leaves a convex problem in
``Q`` (unit diagonal, PSD); rank one is restored by penalizing
``||Q||_* - mu_1(Q)``, which is zero exactly for rank-one PSD matrices.
With a unit diagonal the nuclear norm is the constant ``M + 1``, and the
convex ``mu_1`` is replaced by its tangent plane, so every subproblem is a
log-affine SDP.  An inner loop re-linearizes at a fixed penalty weight and
an outer loop tightens the weight until the residual is below ``eps2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    LN2,
    GramPair,
    InfeasibleError,
    LiftedPhase,
    Scenario,
    build_lifts,
    build_phase_lifts,
    hermitianize,
    rank_residual,
)
from .solver import Affine, LogAffineSDP, SolverReport, Tolerances, ge, solve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PenaltySchedule:
    beta0: float = 100.0
    c: float = 0.3
    eps1: float = 1e-5
    eps2: float = 1e-7
    k_max: int = 20
    outer_max: int = 25

    def __post_init__(self):
        if self.beta0 <= 0:
            raise ValueError("beta0 must be positive")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")
        if self.k_max < 1 or self.outer_max < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class PassiveRecord:
    outer: int
    inner: int
    beta: float
    objective: float
    rank_residual: float
    change: float
    status: str


@dataclass
class PassiveResult:
    Q: np.ndarray
    certified: bool
    rank_residual: float
    records: list[PassiveRecord] = field(default_factory=list)
    reports: list[SolverReport] = field(default_factory=list)

    @property
    def stalled(self) -> bool:
        return not self.certified


def top_eigpair(Q: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and the first matching eigenvector from ``eigh``."""
    vals, vecs = np.linalg.eigh(0.5 * (Q + Q.conj().T))
    return float(vals[-1]), vecs[:, -1]


def eig1_linearization(Qk: np.ndarray) -> tuple[float, Affine]:
    """``mu_1(Qk)`` and the tangent ``mu_1(Qk) + <v v^H, Q - Qk>`` over block ``Q``.

    ``mu_1`` is convex, so the tangent never exceeds it.
    """
    mu1, v = top_eigpair(Qk)
    V = np.outer(v, v.conj())
    const = mu1 - float(np.real(np.vdot(V, Qk)))
    return mu1, Affine(const, {"Q": V})


def _denominators(sc: Scenario, grams: GramPair) -> dict[int, float]:
    """``Tr(F_ii W_rx) + s_i^2``, the SI-plus-noise power of each active link."""
    lifts = build_lifts(sc.ch, np.zeros(sc.m_ris))
    out = {}
    for i in sc.links:
        rx = 1 if i == 1 else 2
        out[i] = float(np.real(np.vdot(lifts.si(i), grams[rx]))) + sc.sys.noise_power[i - 1]
    return out


def build_p5prime(sc: Scenario, grams: GramPair, Qk: np.ndarray, beta: float) -> LogAffineSDP:
    """Penalized phase subproblem at expansion point ``Qk``.

    Objective (bits) is ``sum_i tau log2(1 + Tr(Q U_i)/D_i) - (M+1 - mu1_bar(Q))/beta``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    pl = build_phase_lifts(sc.ch, grams)
    D = _denominators(sc, grams)
    m1 = sc.m_ris + 1
    tau = sc.time_share
    log_terms, cons = [], []
    for i in sc.links:
        U = pl.upsilon(i) / D[i]
        log_terms.append((tau / LN2, Affine(1.0, {"Q": U})))
        gamma = sc.sinr_target(i)
        if gamma > 0:
            if not np.any(U):
                raise InfeasibleError(f"link {i} has no signal path but demands a positive rate")
            cons.append(ge(Affine(0.0, {"Q": U}), gamma))
    _, mu_bar = eig1_linearization(Qk)
    linear = (mu_bar.shift(-m1)) * (1.0 / beta)
    return LogAffineSDP(
        blocks=[("Q", m1)],
        log_terms=log_terms,
        linear_obj=linear,
        ineq_constraints=cons,
        fixed_diag={"Q": True},
    )


def lifted_sum_rate(sc: Scenario, grams: GramPair, Q: np.ndarray) -> float:
    pl = build_phase_lifts(sc.ch, grams)
    D = _denominators(sc, grams)
    val = sum(np.log2(1.0 + np.real(np.vdot(pl.upsilon(i), Q)) / D[i]) for i in sc.links)
    return sc.time_share * float(val)


# The barrier keeps Q strictly interior, so its rank residual scales with the
# duality gap; a tighter gap lets a rank-one optimum certify below eps2.
PHASE_TOL = Tolerances(stat=1e-9)


def algorithm1(
    sc: Scenario,
    grams: GramPair,
    Q0: np.ndarray,
    sched: PenaltySchedule = PenaltySchedule(),
    tol: Tolerances = PHASE_TOL,
) -> PassiveResult:
    """Two-loop penalty method for the phase subproblem.

    The inner loop stops when ``||Q_{k+1} - Q_k||_F^2 < eps1`` or after
    ``k_max`` solves; the outer loop scales ``beta`` by ``c`` until the
    rank residual of the last inner iterate is below ``eps2``.  If the
    outer cap is hit the lowest-residual iterate is returned uncertified.
    """
    Q = hermitianize(Q0)
    beta = sched.beta0
    records, reports = [], []
    best = (rank_residual(Q), Q)
    for outer in range(sched.outer_max):
        for inner in range(sched.k_max):
            p = build_p5prime(sc, grams, Q, beta)
            X, rep = solve(p, tol, x0={"Q": Q})
            reports.append(rep)
            if rep.status == "infeasible":
                raise InfeasibleError("phase subproblem infeasible for the current beamformers")
            Qn = hermitianize(X["Q"])
            if not rep.usable or p.objective({"Q": Qn}) < p.objective({"Q": Q}) - 1e-7:
                # keep the previous point; the tangent at it is still valid
                records.append(PassiveRecord(outer, inner, beta, p.objective({"Q": Q}),
                                             rank_residual(Q), 0.0, rep.status))
                break
            change = float(np.linalg.norm(Qn - Q) ** 2)
            Q = Qn
            res = rank_residual(Q)
            records.append(PassiveRecord(outer, inner, beta, rep.objective, res, change, rep.status))
            if change < sched.eps1:
                break
        res = rank_residual(Q)
        if res < best[0]:
            best = (res, Q)
        if res < sched.eps2:
            return PassiveResult(Q, True, res, records, reports)
        beta *= sched.c
    log.info("penalty loop stalled at residual %.3g", best[0])
    return PassiveResult(best[1], False, best[0], records, reports)


def extract_phases(Q: np.ndarray | None = None, q: np.ndarray | None = None,
                   eps2: float = 1e-7, force: bool = False) -> np.ndarray:
    """RIS phases ``theta_m = -arg(q_m / q_{M+1})`` in ``[0, 2 pi)``.

    ``q`` is taken as ``sqrt(mu_1) v_1`` of ``Q`` unless given directly;
    the ratio removes the global phase ambiguity of the eigenvector.
    """
    if q is None:
        if Q is None:
            raise ValueError("need Q or q")
        res = rank_residual(Q)
        if res >= eps2 and not force:
            raise ValueError(f"Q is not certified rank one (residual {res:.3g})")
        mu1, v = top_eigpair(Q)
        q = np.sqrt(max(mu1, 0.0)) * v
    q = np.asarray(q, dtype=complex)
    return np.mod(-np.angle(q[:-1] / q[-1]), 2 * np.pi)


def lift(theta) -> np.ndarray:
    return LiftedPhase.from_theta(theta).Q
