"""Benchmark schemes sharing the EE machinery.

* ``RIS_FD_EE``: the proposed design (:func:`risfd.ao.run`).
* ``RIS_FD_SR``: same loop with the Dinkelbach ratio pinned at zero, so
  every active step maximizes the sum rate.
* ``NORIS_FD_EE``: RIS removed from both the channels and the power model.
* ``RIS_HD_EE``: half duplex, one direction per half slot, each slot
  optimized on its own with no self-interference and no SIC power.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import ao
from .model import BeamPair, ChannelSet, PowerModel, Scenario, SolutionState, SystemParams, energy_efficiency


class SchemeTag(str, enum.Enum):
    RIS_FD_EE = "RIS-FD-EE"
    RIS_FD_SR = "RIS-FD-SR"
    NORIS_FD_EE = "NoRIS-FD-EE"
    RIS_HD_EE = "RIS-HD-EE"

    @classmethod
    def parse(cls, text: str) -> "SchemeTag":
        key = text.strip().upper().replace("_", "-")
        for tag in cls:
            if tag.value.upper() == key or tag.name.replace("_", "-") == key:
                return tag
        raise ValueError(f"unknown scheme {text!r}; choose from {[t.value for t in cls]}")


@dataclass
class HDState(SolutionState):
    """Combined half-duplex solution.  ``phases`` holds the link-1 slot;
    ``slot_phases`` maps each link to the phases used in its slot."""

    slot_phases: dict = field(default_factory=dict)


def run_ee(ch: ChannelSet, sys: SystemParams, pm: PowerModel, cfg: ao.AOConfig = ao.AOConfig(),
           rng: np.random.Generator | None = None):
    return ao.run(Scenario(ch, sys, pm), cfg, rng)


def run_sr(ch: ChannelSet, sys: SystemParams, pm: PowerModel, cfg: ao.AOConfig = ao.AOConfig(),
           rng: np.random.Generator | None = None):
    """Sum-rate design: the ratio is pinned at 0, EE is still what gets reported."""
    return ao.run(Scenario(ch, sys, pm, tag="sr"), replace(cfg, pin_alpha=0.0), rng)


def noris_scenario(ch: ChannelSet, sys: SystemParams, pm: PowerModel) -> Scenario:
    return Scenario(ch.without_ris(), replace(sys, m_ris=0), pm, tag="noris")


def run_noris(ch: ChannelSet, sys: SystemParams, pm: PowerModel, cfg: ao.AOConfig = ao.AOConfig(),
              rng: np.random.Generator | None = None):
    """FD EE design with no RIS; only the active half of the loop does work."""
    return ao.run(noris_scenario(ch, sys, pm), cfg, rng)


def hd_slot(ch: ChannelSet, sys: SystemParams, pm: PowerModel, link: int) -> Scenario:
    """Half slot carrying only ``link``.

    The slot is charged half the transmit power of its source and half of
    the always-on static terms; SIC power is not charged.  Rates are halved
    before the demand is checked.
    """
    static = 0.5 * (sys.m_ris * pm.p_s + pm.p_0)
    return Scenario(ch, sys, pm, links=(link,), time_share=0.5, tx_coef=0.5, static=static,
                    tag=f"hd{link}")


def _merge_traces(traces: dict[int, ao.RunTrace], slots: dict[int, Scenario]) -> ao.RunTrace:
    """Per-iteration combined records; a slot that stopped early repeats its last row."""
    n = max(len(t.records) for t in traces.values())
    out = ao.RunTrace()
    for k in range(n):
        rows = {i: t.records[min(k, len(t.records) - 1)] for i, t in traces.items()}
        r1 = sum(r.r1 for r in rows.values())
        r2 = sum(r.r2 for r in rows.values())
        p = sum(r.p_tot for r in rows.values())
        out.records.append(ao.TraceRecord(
            t=k, ee=energy_efficiency(r1 + r2, p), r1=r1, r2=r2, p_tot=p,
            alpha=float("nan"),
            rank_residual=max(r.rank_residual for r in rows.values()),
            certified=all(r.certified for r in rows.values()),
            active_status="/".join(r.active_status for r in rows.values()),
            passive_solves=sum(r.passive_solves for r in rows.values()),
            phase_held=any(r.phase_held for r in rows.values()),
        ))
    out.converged = all(t.converged for t in traces.values())
    out.recovery = "/".join(t.recovery for t in traces.values())
    out.flags = [f"slot{i}:{f}" for i, t in traces.items() for f in t.flags]
    return out


def run_hd(ch: ChannelSet, sys: SystemParams, pm: PowerModel, cfg: ao.AOConfig = ao.AOConfig(),
           rng: np.random.Generator | None = None):
    """Two independent half-slot EE problems, combined into one EE figure.

    Each slot has its own phases.  The combined EE is the total effective
    rate over the total time-averaged power.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    slots = {i: hd_slot(ch, sys, pm, i) for i in (1, 2)}
    states, traces = {}, {}
    for i, sc in slots.items():
        states[i], traces[i] = ao.run(sc, cfg, rng)
    # link 1 is carried by source 2, link 2 by source 1
    beams = BeamPair(states[2].beams.w1, states[1].beams.w2)
    rates = (states[1].rates[0], states[2].rates[1])
    p_tot = states[1].p_tot + states[2].p_tot
    trace = _merge_traces(traces, slots)
    trace.lifted_ee = trace.records[-1].ee
    ee = energy_efficiency(sum(rates), p_tot)
    trace.recovered_ee = ee
    state = HDState(beams, states[1].phases, rates, p_tot, ee, 0.0, trace.iterations,
                    slot_phases={i: s.phases.theta for i, s in states.items()})
    return state, trace


RUNNERS = {
    SchemeTag.RIS_FD_EE: run_ee,
    SchemeTag.RIS_FD_SR: run_sr,
    SchemeTag.NORIS_FD_EE: run_noris,
    SchemeTag.RIS_HD_EE: run_hd,
}


def run_scheme(tag: SchemeTag | str, ch, sys, pm, cfg: ao.AOConfig = ao.AOConfig(), rng=None):
    tag = tag if isinstance(tag, SchemeTag) else SchemeTag.parse(tag)
    return RUNNERS[tag](ch, sys, pm, cfg, rng)
