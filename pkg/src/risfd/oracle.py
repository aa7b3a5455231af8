"""Exhaustive grid search of the EE problem for toy sizes.

Used as ground truth for the optimizer.  Rates are evaluated in bulk with
numpy from the effective channels built by :func:`risfd.model.link_channel`,
and the winning point is re-scored with the scalar evaluators of
:class:`risfd.model.Scenario`, so the oracle and the pipeline share their
constraint arithmetic.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass
from importlib import resources

import numpy as np

from .model import BeamPair, ChannelSet, PowerModel, Scenario, SystemParams, link_channel

MAX_EVALUATIONS = 10**8
FIXTURE_NAME = "oracle_fixture.json"


class NoFeasiblePointError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution.

    ``power_points`` geometric levels from ``P_max/1e3`` to ``P_max`` (zero
    is added on top), ``phase_points`` uniform levels per RIS element, and
    for two antennas ``direction_points`` amplitude splits times
    ``direction_points`` relative phases.
    """

    power_points: int = 32
    phase_points: int = 64
    direction_points: int = 8

    def __post_init__(self):
        if min(self.power_points, self.phase_points, self.direction_points) < 2:
            raise ValueError("all grid counts must be at least 2")

    def powers(self, p_max: float) -> np.ndarray:
        # exponents as 3k/(n-1) so a refined grid contains the coarse one exactly
        k = np.arange(self.power_points)
        return np.concatenate([[0.0], p_max * 10.0 ** (-3.0 + 3.0 * k / (self.power_points - 1))])

    def phases(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.phase_points) / self.phase_points

    def directions(self, n: int) -> np.ndarray:
        """Unit vectors ``(cos a, sin a e^{jb})`` for ``n = 2``; ``[[1]]`` for ``n = 1``."""
        if n == 1:
            return np.ones((1, 1), complex)
        d = self.direction_points
        a = 0.5 * np.pi * np.arange(d) / (d - 1)
        b = 2 * np.pi * np.arange(d) / d
        A, B = np.meshgrid(a, b, indexing="ij")
        return np.stack([np.cos(A).ravel() + 0j, np.sin(A).ravel() * np.exp(1j * B.ravel())], axis=1)

    def size(self, n: int, m: int) -> int:
        dirs = 1 if n == 1 else self.direction_points ** 2
        return (self.power_points + 1) ** 2 * dirs ** 2 * self.phase_points ** m


@dataclass
class OracleResult:
    ee: float
    beams: BeamPair
    theta: np.ndarray
    evaluations: int


def _link_gains(sc: Scenario, theta_grid: np.ndarray, dirs: np.ndarray):
    """Signal gains ``|g_i(theta) d|^2`` (phases x directions) and SI gains
    ``|si_i^H d|^2`` (directions) for both links."""
    sig, si = {}, {}
    for i in (1, 2):
        g = np.array([link_channel(sc.ch, i, th) for th in theta_grid])  # (phases, N)
        sig[i] = np.abs(g @ dirs.T) ** 2
        h_si = sc.ch.link(i)[3]
        si[i] = np.abs(dirs @ h_si.conj()) ** 2
    return sig, si


def grid_search_ee(ch: ChannelSet, sys: SystemParams, pm: PowerModel,
                   grid: GridSpec = GridSpec(), chunk: int = 2_000_000) -> OracleResult:
    """Best feasible EE over the grid.

    Ties are broken toward the first grid point in (phase, p1, p2, d1, d2)
    order, with zero power first, so the result is deterministic.
    """
    n, m = sys.n_tx, sys.m_ris
    if n > 2 or m > 3:
        raise ValueError(f"oracle supports N <= 2 and M <= 3, got N={n}, M={m}")
    total = grid.size(n, m)
    if total > MAX_EVALUATIONS:
        raise ValueError(f"grid has {total} points, more than {MAX_EVALUATIONS}")
    sc = Scenario(ch, sys, pm)
    p1s, p2s = grid.powers(sys.p_max[0]), grid.powers(sys.p_max[1])
    dirs = grid.directions(n)
    combos = list(itertools.product(grid.phases(), repeat=m))
    theta_grid = np.array(combos, dtype=float).reshape(len(combos), m)
    sig, si = _link_gains(sc, theta_grid, dirs)
    s2 = sys.noise_power
    # rate check on the same scale as Scenario.feasible
    rmin = [sys.rate_min[i] - 1e-6 for i in (0, 1)]
    static, coef = sc.static_power, sc.power_coef

    P1 = p1s[:, None, None, None]
    P2 = p2s[None, :, None, None]
    ptot = coef * (P1 + P2) + static  # (p1, p2, 1, 1)
    # interference seen by each receiver depends on its own power and direction
    int1 = P1 * si[1][None, None, :, None] + s2[0]  # S1 receives link 1, own beam d1
    int2 = P2 * si[2][None, None, None, :] + s2[1]  # S2 receives link 2, own beam d2
    per_phase = len(p1s) * len(p2s) * len(dirs) ** 2
    step = max(1, chunk // per_phase)

    best = (-np.inf, None)
    for start in range(0, len(theta_grid), step):
        stop = min(start + step, len(theta_grid))
        a1 = sig[1][start:stop]  # link 1 is sent by S2 on d2
        a2 = sig[2][start:stop]  # link 2 is sent by S1 on d1
        r1 = np.log2(1 + P2[None] * a1[:, None, None, None, :] / int1[None])
        r2 = np.log2(1 + P1[None] * a2[:, None, None, :, None] / int2[None])
        ee = (r1 + r2) / ptot[None]
        ee = np.where((r1 >= rmin[0]) & (r2 >= rmin[1]), ee, -np.inf)
        k = int(np.argmax(ee))
        if ee.flat[k] > best[0]:
            best = (float(ee.flat[k]), np.unravel_index(k, ee.shape), start)
    if best[1] is None:
        raise NoFeasiblePointError("no grid point meets the rate demands")
    (ph, i1, i2, j1, j2), start = best[1], best[2]
    theta = theta_grid[start + ph]
    beams = BeamPair(np.sqrt(p1s[i1]) * dirs[j1], np.sqrt(p2s[i2]) * dirs[j2])
    return OracleResult(sc.ee(beams, theta), beams, theta, total)


# ---------------------------------------------------------------------------
# frozen fixtures


def scenario_hash(ch: ChannelSet, sys: SystemParams, pm: PowerModel, grid: GridSpec) -> str:
    h = hashlib.sha256()
    for name in ChannelSet.BLOCKS:
        arr = np.ascontiguousarray(getattr(ch, name), dtype="<c16")
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    meta = {"system": asdict(sys), "power": asdict(pm), "grid": asdict(grid)}
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()


def load_fixture(path=None) -> dict:
    if path is None:
        text = resources.files("risfd").joinpath("data").joinpath(FIXTURE_NAME).read_text()
    else:
        with open(path) as f:
            text = f.read()
    return json.loads(text)


def write_fixture(path, entries: dict) -> None:
    with open(path, "w") as f:
        json.dump(entries, f, indent=2, sort_keys=True)
        f.write("\n")
