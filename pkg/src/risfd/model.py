"""System model for the RIS-aided full-duplex MISO link.

Two sources S1 and S2, each with ``N`` transmit antennas and one receive
antenna, exchange data through a direct link and an ``M``-element RIS.
Everything here is in linear units (Watts, bps/Hz); dB conversions live
at the configuration boundary.

Link numbering follows the receiver: link 1 is S2 -> S1 (rate ``R_1``),
link 2 is S1 -> S2 (rate ``R_2``).  Source ``s`` transmits with ``w_s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence, Union

import numpy as np

LN2 = np.log(2.0)

class InfeasibleError(RuntimeError):
    """Rate demands cannot be met within the power caps."""


class RecoveryError(RuntimeError):
    """No feasible beamformer could be recovered from a relaxed solution."""


# link -> (transmitting source, receiving source)
LINK_ENDS = {1: (2, 1), 2: (1, 2)}


def _pair(value) -> tuple[float, float]:
    if np.ndim(value) == 0:
        return (float(value), float(value))
    a, b = value
    return (float(a), float(b))


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemParams:
    """Antenna/element counts, noise powers, rate demands and power caps.

    Scalar arguments for the per-source fields are broadcast to both
    sources.
    """

    n_tx: int
    m_ris: int
    noise_power: tuple[float, float]
    rate_min: tuple[float, float]
    p_max: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "noise_power", _pair(self.noise_power))
        object.__setattr__(self, "rate_min", _pair(self.rate_min))
        object.__setattr__(self, "p_max", _pair(self.p_max))
        if int(self.n_tx) != self.n_tx or self.n_tx < 1:
            raise ValueError(f"n_tx must be a positive integer, got {self.n_tx}")
        if int(self.m_ris) != self.m_ris or self.m_ris < 0:
            raise ValueError(f"m_ris must be a non-negative integer, got {self.m_ris}")
        if min(self.noise_power) <= 0 or min(self.p_max) <= 0:
            raise ValueError("noise powers and power caps must be positive")
        if min(self.rate_min) < 0:
            raise ValueError("rate demands must be non-negative")


@dataclass(frozen=True)
class PowerModel:
    """Isolation factor and static power terms of the consumption model."""

    xi: float = 0.1
    p_cc: float = 0.05
    p_s: float = 0.01
    p_0: float = 1.0

    def __post_init__(self):
        if min(self.xi, self.p_cc, self.p_s, self.p_0) < 0:
            raise ValueError("power model fields must be non-negative")

    def static(self, m_ris: int) -> float:
        return self.p_cc + m_ris * self.p_s + self.p_0

    def sic_power(self, tx_power: float) -> float:
        """Power drawn by self-interference cancellation at total transmit power."""
        return self.xi * tx_power + self.p_cc


@dataclass(frozen=True)
class ChannelSet:
    """All channel blocks of one realization.

    ``h_s1r``/``h_s2r`` are ``M x N`` (source -> RIS), ``h_rs1``/``h_rs2``
    length-``M`` (RIS -> source, used conjugated), the direct and SI
    channels are length-``N`` (also used conjugated).
    """

    h_s1r: np.ndarray
    h_s2r: np.ndarray
    h_rs1: np.ndarray
    h_rs2: np.ndarray
    h_s1s2: np.ndarray
    h_s2s1: np.ndarray
    h_s1s1: np.ndarray
    h_s2s2: np.ndarray

    BLOCKS = ("h_s1r", "h_s2r", "h_rs1", "h_rs2", "h_s1s2", "h_s2s1", "h_s1s1", "h_s2s2")

    def __post_init__(self):
        for name in self.BLOCKS:
            arr = np.asarray(getattr(self, name), dtype=complex)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        m, n = self.h_s1r.shape
        expected = {
            "h_s2r": (m, n), "h_rs1": (m,), "h_rs2": (m,), "h_s1s2": (n,),
            "h_s2s1": (n,), "h_s1s1": (n,), "h_s2s2": (n,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}"
                )

    @property
    def n_tx(self) -> int:
        return self.h_s1r.shape[1]

    @property
    def m_ris(self) -> int:
        return self.h_s1r.shape[0]

    def check(self, sys: SystemParams) -> None:
        if (self.m_ris, self.n_tx) != (sys.m_ris, sys.n_tx):
            raise ValueError(
                f"channel dims (M={self.m_ris}, N={self.n_tx}) do not match "
                f"system (M={sys.m_ris}, N={sys.n_tx})"
            )

    def without_ris(self) -> "ChannelSet":
        """Same direct and SI channels, RIS removed (``M = 0``)."""
        n = self.n_tx
        return replace(
            self,
            h_s1r=np.zeros((0, n), complex), h_s2r=np.zeros((0, n), complex),
            h_rs1=np.zeros(0, complex), h_rs2=np.zeros(0, complex),
        )

    def link(self, i: int):
        """(direct, ris_rx, tx_ris, si) for link ``i``."""
        if i == 1:
            return self.h_s2s1, self.h_rs1, self.h_s2r, self.h_s1s1
        if i == 2:
            return self.h_s1s2, self.h_rs2, self.h_s1r, self.h_s2s2
        raise ValueError(f"unknown link {i}")


@dataclass(frozen=True)
class BeamPair:
    w1: np.ndarray
    w2: np.ndarray

    def __getitem__(self, s: int) -> np.ndarray:
        return (self.w1, self.w2)[s - 1]

    def power(self, s: int) -> float:
        return float(np.vdot(self[s], self[s]).real)

    def to_grams(self) -> "GramPair":
        return GramPair(np.outer(self.w1, self.w1.conj()), np.outer(self.w2, self.w2.conj()))


@dataclass(frozen=True)
class GramPair:
    """Lifted beamformers ``W_s = w_s w_s^H`` (after relaxation, any PSD)."""

    W1: np.ndarray
    W2: np.ndarray

    def __getitem__(self, s: int) -> np.ndarray:
        return (self.W1, self.W2)[s - 1]

    def power(self, s: int) -> float:
        return float(np.trace(self[s]).real)

    def is_valid(self, herm_tol: float = 1e-10, eig_tol: float = -1e-9) -> bool:
        for W in (self.W1, self.W2):
            if np.max(np.abs(W - W.conj().T), initial=0.0) > herm_tol:
                return False
            if W.size and np.linalg.eigvalsh(W).min() < eig_tol:
                return False
        return True


Beams = Union[BeamPair, GramPair]


@dataclass(frozen=True)
class LiftedPhase:
    """RIS phases with the lifted vector ``q = [e^{-j theta}, 1]`` and ``Q = q q^H``."""

    theta: np.ndarray
    q: np.ndarray
    Q: np.ndarray

    @classmethod
    def from_theta(cls, theta) -> "LiftedPhase":
        theta = np.mod(np.asarray(theta, dtype=float), 2 * np.pi)
        q = np.append(np.exp(-1j * theta), 1.0)
        return cls(theta, q, np.outer(q, q.conj()))


@dataclass
class SolutionState:
    beams: Beams
    phases: LiftedPhase
    rates: tuple[float, float]
    p_tot: float
    ee: float
    alpha: float = 0.0
    iteration: int = 0


class Lifts(NamedTuple):
    F1: np.ndarray
    F2: np.ndarray
    F11: np.ndarray
    F22: np.ndarray

    def signal(self, i: int) -> np.ndarray:
        return self.F1 if i == 1 else self.F2

    def si(self, i: int) -> np.ndarray:
        return self.F11 if i == 1 else self.F22


class PhaseLifts(NamedTuple):
    G1: np.ndarray
    G2: np.ndarray
    U1: np.ndarray
    U2: np.ndarray

    def upsilon(self, i: int) -> np.ndarray:
        return self.U1 if i == 1 else self.U2


# ---------------------------------------------------------------------------
# evaluators


def effective_channel(direct, ris_rx, tx_ris, theta) -> np.ndarray:
    """Row vector ``h_d^H + h_r^H Diag(e^{j theta}) H`` of length ``N``."""
    direct = np.asarray(direct, dtype=complex)
    ris_rx = np.asarray(ris_rx, dtype=complex)
    tx_ris = np.asarray(tx_ris, dtype=complex).reshape(len(ris_rx), len(direct))
    theta = np.asarray(theta, dtype=float)
    if tx_ris.shape[1] != direct.shape[0] or theta.shape != ris_rx.shape:
        raise ValueError(
            f"dimension mismatch: direct {direct.shape}, ris_rx {ris_rx.shape}, "
            f"tx_ris {tx_ris.shape}, theta {theta.shape}"
        )
    return direct.conj() + (ris_rx.conj() * np.exp(1j * theta)) @ tx_ris


def link_channel(ch: ChannelSet, i: int, theta) -> np.ndarray:
    direct, ris_rx, tx_ris, _ = ch.link(i)
    return effective_channel(direct, ris_rx, tx_ris, theta)


def _sinr_terms(ch: ChannelSet, beams: Beams, theta, i: int):
    tx, rx = LINK_ENDS[i]
    g = link_channel(ch, i, theta)
    si = ch.link(i)[3].conj()
    if isinstance(beams, GramPair):
        sig = float(np.real(g @ beams[tx] @ g.conj()))
        interf = float(np.real(si @ beams[rx] @ si.conj()))
    else:
        sig = float(abs(g @ beams[tx]) ** 2)
        interf = float(abs(si @ beams[rx]) ** 2)
    return sig, interf


def link_rate(ch: ChannelSet, beams: Beams, theta, sys: SystemParams, i: int) -> float:
    sig, interf = _sinr_terms(ch, beams, theta, i)
    return float(np.log2(1.0 + sig / (interf + sys.noise_power[i - 1])))


def rate_s1(ch: ChannelSet, beams: Beams, theta, sys: SystemParams) -> float:
    """Rate received at S1 (bps/Hz)."""
    return link_rate(ch, beams, theta, sys, 1)


def rate_s2(ch: ChannelSet, beams: Beams, theta, sys: SystemParams) -> float:
    """Rate received at S2 (bps/Hz)."""
    return link_rate(ch, beams, theta, sys, 2)


def tx_power(beams: Beams) -> float:
    return beams.power(1) + beams.power(2)


def total_power(beams: Beams, pm: PowerModel, m_ris: int) -> float:
    """Full-duplex consumption: ``(1+xi)(|w1|^2+|w2|^2) + P_CC + M P_s + P_0``."""
    return (1.0 + pm.xi) * tx_power(beams) + pm.static(m_ris)


def energy_efficiency(sum_rate: float, p_tot: float) -> float:
    if p_tot <= 0:
        raise ValueError("total power must be positive")
    return sum_rate / p_tot


def build_lifts(ch: ChannelSet, theta) -> Lifts:
    g1 = link_channel(ch, 1, theta)
    g2 = link_channel(ch, 2, theta)
    return Lifts(
        np.outer(g1.conj(), g1),
        np.outer(g2.conj(), g2),
        np.outer(ch.h_s1s1, ch.h_s1s1.conj()),
        np.outer(ch.h_s2s2, ch.h_s2s2.conj()),
    )


def cascade_matrix(ch: ChannelSet, i: int) -> np.ndarray:
    """``(M+1) x N`` stack of ``Diag(h_r^H) H`` over ``h_d^H``; ``q^H G`` is the link row."""
    direct, ris_rx, tx_ris, _ = ch.link(i)
    return np.vstack([ris_rx.conj()[:, None] * tx_ris, direct.conj()[None, :]])


def build_phase_lifts(ch: ChannelSet, grams: GramPair) -> PhaseLifts:
    G1 = cascade_matrix(ch, 1)
    G2 = cascade_matrix(ch, 2)
    U1 = G1 @ grams.W2 @ G1.conj().T
    U2 = G2 @ grams.W1 @ G2.conj().T
    return PhaseLifts(G1, G2, hermitian_part(U1), hermitian_part(U2))


def hermitian_part(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.conj().T)


def hermitianize(X: np.ndarray, clip: float = -1e-9) -> np.ndarray:
    """Symmetrize and zero out eigenvalues below ``clip``."""
    X = hermitian_part(np.asarray(X, dtype=complex))
    if X.size == 0:
        return X
    vals, vecs = np.linalg.eigh(X)
    if vals.min() < clip:
        vals = np.where(vals < clip, 0.0, vals)
        X = hermitian_part((vecs * vals) @ vecs.conj().T)
    return X


def rank_residual(Q: np.ndarray) -> float:
    """``||Q||_* - mu_1(Q)``; zero exactly when ``Q`` is PSD rank one."""
    vals = np.linalg.eigvalsh(hermitian_part(Q))
    return float(np.sum(np.abs(vals)) - vals[-1])


# ---------------------------------------------------------------------------
# scenario: which links are active and how power is accounted


@dataclass(frozen=True)
class Scenario:
    """A channel realization plus the accounting used to score it.

    The default is the full-duplex system.  Half-duplex slots reuse the
    same machinery with a single active link, a time share of 1/2 on the
    rate and custom transmit/static power terms.
    """

    ch: ChannelSet
    sys: SystemParams
    pm: PowerModel
    links: tuple[int, ...] = (1, 2)
    time_share: float = 1.0
    tx_coef: float | None = None
    static: float | None = None
    tag: str = field(default="fd", compare=False)

    def __post_init__(self):
        self.ch.check(self.sys)
        if not self.links or any(i not in LINK_ENDS for i in self.links):
            raise ValueError(f"invalid links {self.links}")

    @property
    def m_ris(self) -> int:
        return self.sys.m_ris

    @property
    def sources(self) -> tuple[int, ...]:
        """Transmitting sources, in increasing order."""
        return tuple(sorted({LINK_ENDS[i][0] for i in self.links}))

    @property
    def power_coef(self) -> float:
        return 1.0 + self.pm.xi if self.tx_coef is None else self.tx_coef

    @property
    def static_power(self) -> float:
        return self.pm.static(self.m_ris) if self.static is None else self.static

    def sinr_target(self, i: int) -> float:
        """Linear SINR needed so that ``time_share * R_i >= Gamma_i``."""
        return 2.0 ** (self.sys.rate_min[i - 1] / self.time_share) - 1.0

    def power(self, beams: Beams) -> float:
        return self.power_coef * sum(beams.power(s) for s in self.sources) + self.static_power

    def rates(self, beams: Beams, theta) -> tuple[float, float]:
        """Per-link rates (bps/Hz, before time sharing); inactive links are 0."""
        return tuple(
            link_rate(self.ch, beams, theta, self.sys, i) if i in self.links else 0.0
            for i in (1, 2)
        )

    def effective_rates(self, beams: Beams, theta) -> tuple[float, float]:
        """Per-link rates scaled by the time share; these add up to the sum rate."""
        return tuple(self.time_share * r for r in self.rates(beams, theta))

    def sum_rate(self, beams: Beams, theta) -> float:
        return self.time_share * sum(self.rates(beams, theta))

    def ee(self, beams: Beams, theta) -> float:
        return energy_efficiency(self.sum_rate(beams, theta), self.power(beams))

    def feasible(self, beams: Beams, theta, rate_tol: float = 1e-6, power_tol: float = 1e-9) -> bool:
        r = self.rates(beams, theta)
        for i in self.links:
            if self.time_share * r[i - 1] < self.sys.rate_min[i - 1] - rate_tol:
                return False
        return all(beams.power(s) <= self.sys.p_max[s - 1] + power_tol for s in self.sources)

    def state(self, beams: Beams, theta, alpha: float = 0.0, iteration: int = 0) -> SolutionState:
        rates = self.effective_rates(beams, theta)
        p_tot = self.power(beams)
        ee = energy_efficiency(sum(rates), p_tot)
        return SolutionState(beams, LiftedPhase.from_theta(theta), rates, p_tot, ee, alpha, iteration)


def zero_grams(n: int) -> GramPair:
    return GramPair(np.zeros((n, n), complex), np.zeros((n, n), complex))


def gram_from(blocks: Sequence[np.ndarray | None], n: int) -> GramPair:
    z = np.zeros((n, n), complex)
    return GramPair(*(z if b is None else b for b in blocks))
