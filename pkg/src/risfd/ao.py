"""Alternating optimization of beamformers and RIS phases for energy efficiency.

Each outer iteration updates the Dinkelbach ratio and solves the lifted
beamforming problem at fixed phases, then runs the penalty method for the
phases at fixed Gram matrices.  Both halves never decrease the lifted EE,
so the recorded trace is monotone up to solver tolerance.  Rank-one
beamformers are recovered once, after the loop.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .active import ActiveIterate, RecoveryError, active_step, dinkelbach_alpha, principal, recover_pair
from .model import (
    LINK_ENDS,
    BeamPair,
    GramPair,
    InfeasibleError,
    Scenario,
    SolutionState,
    link_channel,
)
from .passive import PHASE_TOL, PenaltySchedule, algorithm1, extract_phases, lift
from .solver import Tolerances

log = logging.getLogger(__name__)

TRACE_SCHEMA = "risfd-trace v1"
TRACE_COLUMNS = ("t", "ee", "r1", "r2", "p_tot", "alpha", "rank_residual", "certified",
                 "active_status", "passive_solves", "phase_held")


@dataclass(frozen=True)
class AOConfig:
    eps_d: float = 1e-4
    t_max: int = 30
    schedule: PenaltySchedule = PenaltySchedule()
    n_rand: int = 1000
    init: str = "zero"  # "zero" | "random"
    init_seed: int = 0
    active_repeats: int = 1
    pin_alpha: float | None = None
    tol: Tolerances = Tolerances()
    phase_tol: Tolerances = PHASE_TOL

    def __post_init__(self):
        if self.eps_d <= 0:
            raise ValueError("eps_d must be positive")
        if self.t_max < 1:
            raise ValueError("t_max must be at least 1")
        if self.init not in ("zero", "random"):
            raise ValueError(f"unknown init strategy {self.init!r}")


@dataclass
class TraceRecord:
    t: int
    ee: float
    r1: float
    r2: float
    p_tot: float
    alpha: float
    rank_residual: float
    certified: bool
    active_status: str
    passive_solves: int
    phase_held: bool


@dataclass
class RunTrace:
    records: list[TraceRecord] = field(default_factory=list)
    lifted_ee: float = float("nan")
    recovered_ee: float = float("nan")
    recovery: str = ""
    converged: bool = False
    flags: list[str] = field(default_factory=list)
    # quantity the run maximizes: "ee", or "rate" when the ratio is pinned
    objective: str = "ee"

    @property
    def ee(self) -> np.ndarray:
        return np.array([r.ee for r in self.records])

    @property
    def values(self) -> np.ndarray:
        if self.objective == "rate":
            return np.array([r.r1 + r.r2 for r in self.records])
        return self.ee

    @property
    def iterations(self) -> int:
        return max(len(self.records) - 1, 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {TRACE_SCHEMA}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([
                r.t, f"{r.ee:.12g}", f"{r.r1:.12g}", f"{r.r2:.12g}", f"{r.p_tot:.12g}",
                f"{r.alpha:.12g}", f"{r.rank_residual:.12g}", int(r.certified),
                r.active_status, r.passive_solves, int(r.phase_held),
            ])
        return buf.getvalue()


def check_monotone(trace: RunTrace | np.ndarray, slack: float = 1e-5) -> tuple[bool, int | None]:
    """``(True, None)`` if the sequence never drops by more than ``slack``.

    Otherwise ``(False, t)`` with ``t`` the first index whose value is below
    its predecessor.  For a :class:`RunTrace` the sequence is the quantity
    the run maximizes (lifted EE, or sum rate for a pinned ratio).
    """
    ee = trace.values if isinstance(trace, RunTrace) else np.asarray(trace, dtype=float)
    if ee.size == 0:
        raise ValueError("empty trace")
    drops = np.flatnonzero(ee[1:] < ee[:-1] - slack)
    if drops.size:
        return False, int(drops[0] + 1)
    return True, None


# ---------------------------------------------------------------------------
# initialization


def _direction(sc: Scenario, s: int, theta) -> np.ndarray:
    """Unit transmit direction of source ``s``: matched to the link it feeds,
    projected away from its own SI channel when there are spare antennas."""
    i = 2 if s == 1 else 1  # link on which s transmits
    g = link_channel(sc.ch, i, theta).conj()
    n = g.shape[0]
    if n >= 2 and (LINK_ENDS[3 - i][1] == s) and (3 - i) in sc.links:
        si = sc.ch.link(3 - i)[3]
        nrm = np.vdot(si, si).real
        if nrm > 0:
            proj = g - si * (np.vdot(si, g) / nrm)
            if np.linalg.norm(proj) > 1e-9 * np.linalg.norm(g):
                g = proj
    nrm = np.linalg.norm(g)
    if nrm == 0:
        return np.full(n, 1 / np.sqrt(n), complex)
    return g / nrm


def initial_theta(sc: Scenario, cfg: AOConfig) -> np.ndarray:
    if cfg.init == "random":
        return np.random.default_rng(cfg.init_seed).uniform(0, 2 * np.pi, sc.m_ris)
    return np.zeros(sc.m_ris)


def aligned_theta(sc: Scenario, i: int, rounds: int = 20) -> np.ndarray:
    """Phases that co-phase every reflected path of link ``i`` with its direct path.

    Alternates a matched-filter beam for the current phases with the
    per-element phase that adds coherently for that beam.
    """
    direct, ris_rx, tx_ris, _ = sc.ch.link(i)
    theta = np.zeros(sc.m_ris)
    for _ in range(rounds):
        g = link_channel(sc.ch, i, theta)
        nrm = np.linalg.norm(g)
        w = g.conj() / nrm if nrm > 0 else np.full(g.shape, 1 / np.sqrt(g.size), complex)
        ref = np.angle(np.vdot(direct, w)) if np.any(direct) else 0.0
        paths = ris_rx.conj() * (tx_ris @ w)
        new = np.mod(ref - np.angle(paths), 2 * np.pi)
        if np.allclose(new, theta, atol=1e-12):
            break
        theta = new
    return theta


def _start_at(sc: Scenario, theta: np.ndarray) -> SolutionState:
    n = sc.sys.n_tx
    dirs = {s: _direction(sc, s, theta) for s in sc.sources}

    def beams(frac, ratio=(1.0, 1.0)):
        w = {s: np.sqrt(frac * ratio[s - 1] * sc.sys.p_max[s - 1]) * dirs.get(s, 0) for s in sc.sources}
        return BeamPair(w.get(1, np.zeros(n, complex)), w.get(2, np.zeros(n, complex)))

    def ok(frac, ratio=(1.0, 1.0)):
        return sc.feasible(beams(frac, ratio), theta, rate_tol=0.0)

    ratio = (1.0, 1.0)
    lo, hi = 0.1, 1.0
    if ok(lo):
        frac = lo
    elif ok(hi):
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if ok(mid) else (mid, hi)
        frac = hi
    else:
        # with self-interference a common fraction can fail where unequal
        # powers succeed; fall back to the cheapest point of a coarse split grid
        levels = np.geomspace(1e-3, 1.0, 25)
        found = [(a * sc.sys.p_max[0] + b * sc.sys.p_max[1], (a, b))
                 for a in levels for b in levels if ok(1.0, (a, b))]
        if not found:
            raise InfeasibleError("rate demands not met even at full power")
        frac, ratio = 1.0, min(found)[1]
    b = beams(frac, ratio)
    return sc.state(b.to_grams(), theta, alpha=sc.ee(b, theta))


def initialize(sc: Scenario, cfg: AOConfig = AOConfig(), theta=None) -> SolutionState:
    """Feasible starting point.

    Directions are matched filters toward the partner (SI-nulled when
    ``N >= 2``); both sources use the same fraction ``s`` of their caps,
    found by bisection on ``[0.1, 1]`` as the smallest fraction meeting
    the rate demands.  If even full power fails, a coarse grid of unequal
    fractions is tried.  Without explicit ``theta`` the configured phases
    come first; when they admit no feasible start, phases co-phased for
    each link in turn are tried before giving up.
    """
    if theta is not None:
        return _start_at(sc, np.asarray(theta, dtype=float))
    candidates = [initial_theta(sc, cfg)]
    if sc.m_ris > 0:
        candidates += [aligned_theta(sc, i) for i in sc.links]
    for k, th in enumerate(candidates):
        try:
            return _start_at(sc, th)
        except InfeasibleError:
            if k == len(candidates) - 1:
                raise
            log.info("no feasible start at candidate phases %d, trying the next", k)
    raise AssertionError("unreachable")


def _record(t, sc, grams, theta, alpha, res, cert, status, solves, held) -> TraceRecord:
    r = sc.effective_rates(grams, theta)
    return TraceRecord(t, sc.ee(grams, theta), r[0], r[1], sc.power(grams), alpha,
                       res, cert, status, solves, held)


def passive_update(sc: Scenario, grams: GramPair, theta, cfg: AOConfig):
    """Phase update with a safeguard: keep ``theta`` if the new phases lose rate.

    Returns ``(theta, PassiveResult, held)``.
    """
    if sc.m_ris == 0:
        return theta, None, False
    res = algorithm1(sc, grams, lift(theta), cfg.schedule, cfg.phase_tol)
    new = extract_phases(res.Q, eps2=cfg.schedule.eps2, force=True)
    old_rate = sc.sum_rate(grams, theta)
    if sc.sum_rate(grams, new) < old_rate or not sc.feasible(grams, new):
        return theta, res, True
    return new, res, False


def run(sc: Scenario, cfg: AOConfig = AOConfig(), rng: np.random.Generator | None = None,
        start: SolutionState | None = None) -> tuple[SolutionState, RunTrace]:
    """Alternate active and passive updates until the relative gain is below ``eps_d``.

    The gain is measured on the lifted EE, or on the sum rate when
    ``cfg.pin_alpha`` fixes the ratio.
    """
    state = initialize(sc, cfg) if start is None else start
    grams = state.beams if isinstance(state.beams, GramPair) else state.beams.to_grams()
    theta = state.phases.theta
    trace = RunTrace(objective="ee" if cfg.pin_alpha is None else "rate")
    alpha = dinkelbach_alpha(grams, sc, theta) if cfg.pin_alpha is None else cfg.pin_alpha
    trace.records.append(_record(0, sc, grams, theta, alpha, 0.0, True, "init", 0, False))
    it = ActiveIterate(grams, alpha)
    for t in range(1, cfg.t_max + 1):
        it = active_step(it, sc, theta, alpha=cfg.pin_alpha, tol=cfg.tol, repeats=cfg.active_repeats)
        grams = it.grams
        status = it.reports[-1].status if it.reports else "none"
        theta, pres, held = passive_update(sc, grams, theta, cfg)
        res = pres.rank_residual if pres is not None else 0.0
        cert = pres.certified if pres is not None else True
        solves = len(pres.reports) if pres is not None else 0
        if pres is not None and not pres.certified:
            trace.flags.append(f"uncertified@{t}")
        rec = _record(t, sc, grams, theta, it.alpha, res, cert, status, solves, held)
        trace.records.append(rec)
        prev, cur = trace.values[-2:]
        if (cur - prev) / max(prev, 1e-12) < cfg.eps_d:
            trace.converged = True
            break
    ok, idx = check_monotone(trace, 1e-5)
    if not ok:
        trace.flags.append(f"non_monotone@{idx}")
    trace.lifted_ee = trace.records[-1].ee

    try:
        rec = recover_pair(grams, sc, theta, cfg.n_rand,
                           rng if rng is not None else np.random.default_rng(0),
                           objective=trace.objective)
        beams, trace.recovery = rec.beams, rec.method
    except RecoveryError:
        trace.flags.append("recovery_failed")
        w = {s: principal(grams[s])[0] for s in (1, 2)}
        beams, trace.recovery = BeamPair(w[1], w[2]), "failed"
    final = sc.state(beams, theta, alpha=it.alpha, iteration=trace.iterations)
    trace.recovered_ee = final.ee
    if not sc.feasible(beams, theta):
        trace.flags.append("infeasible_final")
    return final, trace
