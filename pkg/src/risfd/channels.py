"""Channel realizations from geometry: path loss plus Rician fading.

Every link gets its own counter-based (Philox) random stream derived from
the master seed and a fixed link index, so adding or reordering links
never changes the draws of the others.  LOS components are unit-modulus
matrices with i.i.d. uniform phases taken from a separate ``los_seed``;
they stay fixed while the NLOS part is redrawn across trial seeds.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .model import ChannelSet, SystemParams, db_to_linear

# stable stream index per block; never renumber
LINK_INDEX = {
    "h_s1r": 0, "h_s2r": 1, "h_rs1": 2, "h_rs2": 3,
    "h_s1s2": 4, "h_s2s1": 5, "h_s1s1": 6, "h_s2s2": 7,
}


@dataclass(frozen=True)
class Geometry:
    """2-D node positions in meters."""

    pos_s1: tuple[float, float] = (0.0, 0.0)
    pos_s2: tuple[float, float] = (200.0, 0.0)
    pos_ris: tuple[float, float] = (20.0, 0.0)

    def __post_init__(self):
        for a, b in (("s1", "s2"), ("s1", "ris"), ("s2", "ris")):
            if self.distance(a, b) <= 0:
                raise ValueError(f"nodes {a} and {b} coincide")

    def distance(self, a: str, b: str) -> float:
        pa = np.asarray(getattr(self, f"pos_{a}"), dtype=float)
        pb = np.asarray(getattr(self, f"pos_{b}"), dtype=float)
        return float(np.hypot(*(pa - pb)))


@dataclass(frozen=True)
class FadingParams:
    pl0_db: float = -30.0
    d0: float = 1.0
    exp_ris: float = 2.5
    exp_direct: float = 3.5
    rician_k_si_db: float = 5.0
    rician_k_other_db: float = 3.0
    si_pathloss_db: float = -100.0
    seed: int = 0
    los_seed: int = 20230101
    # multiplies every block's power gain; 0 gives an all-zero ChannelSet
    gain_scale: float = 1.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("reference distance must be positive")
        if self.exp_ris <= 0 or self.exp_direct <= 0:
            raise ValueError("path-loss exponents must be positive")
        if self.gain_scale < 0:
            raise ValueError("gain_scale must be non-negative")


def path_loss(d: float, exponent: float, pl0_db: float = -30.0, d0: float = 1.0) -> float:
    """Linear power gain ``PL0 (d/d0)^(-exponent)``."""
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    return float(db_to_linear(pl0_db) * (d / d0) ** (-exponent))


def link_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def los_matrix(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    return np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(rows, cols)))


def rician_block(
    rows: int,
    cols: int,
    k_factor_db: float,
    gain_linear: float,
    rng: np.random.Generator,
    los: np.ndarray | None = None,
) -> np.ndarray:
    """``sqrt(gain) (sqrt(K/(K+1)) H_los + sqrt(1/(K+1)) H_nlos)``.

    ``los`` defaults to random unit-modulus entries drawn from ``rng``
    before the NLOS part.  ``k_factor_db=-inf`` gives pure Rayleigh fading.
    """
    k = float(db_to_linear(k_factor_db))
    if k < 0:
        raise ValueError("Rician factor must be non-negative")
    if los is None:
        los = los_matrix(rows, cols, rng)
    nlos = (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2)
    h = np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * nlos
    return np.sqrt(gain_linear) * h


def link_gains(geom: Geometry, fp: FadingParams) -> dict[str, tuple[float, float]]:
    """Per-block ``(power gain, Rician K in dB)``."""
    d_sr1 = geom.distance("s1", "ris")
    d_sr2 = geom.distance("s2", "ris")
    d_ss = geom.distance("s1", "s2")

    def pl(d, e):
        return path_loss(d, e, fp.pl0_db, fp.d0)

    k, k_si = fp.rician_k_other_db, fp.rician_k_si_db
    si = float(db_to_linear(fp.si_pathloss_db))
    gains = {
        "h_s1r": (pl(d_sr1, fp.exp_ris), k),
        "h_s2r": (pl(d_sr2, fp.exp_ris), k),
        "h_rs1": (pl(d_sr1, fp.exp_ris), k),
        "h_rs2": (pl(d_sr2, fp.exp_ris), k),
        "h_s1s2": (pl(d_ss, fp.exp_direct), k),
        "h_s2s1": (pl(d_ss, fp.exp_direct), k),
        "h_s1s1": (si, k_si),
        "h_s2s2": (si, k_si),
    }
    return {name: (g * fp.gain_scale, kk) for name, (g, kk) in gains.items()}


def generate_scenario(geom: Geometry, fp: FadingParams, sys: SystemParams) -> ChannelSet:
    m, n = sys.m_ris, sys.n_tx
    shapes = {
        "h_s1r": (m, n), "h_s2r": (m, n), "h_rs1": (m, 1), "h_rs2": (m, 1),
        "h_s1s2": (n, 1), "h_s2s1": (n, 1), "h_s1s1": (n, 1), "h_s2s2": (n, 1),
    }
    blocks = {}
    for name, (gain, k_db) in link_gains(geom, fp).items():
        rows, cols = shapes[name]
        idx = LINK_INDEX[name]
        los = los_matrix(rows, cols, link_rng(fp.los_seed, idx))
        h = rician_block(rows, cols, k_db, gain, link_rng(fp.seed, idx), los=los)
        blocks[name] = h if cols > 1 or name in ("h_s1r", "h_s2r") else h[:, 0]
    return ChannelSet(**blocks)


# ---------------------------------------------------------------------------
# binary dump

DUMP_MAGIC = b"RISCHAN1"


def dump_channels(path, ch: ChannelSet, meta: dict | None = None) -> None:
    """Write ``ch`` to ``path`` (format described in docs/formats.md)."""
    header = json.dumps(meta or {}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(ChannelSet.BLOCKS)))
        for name in ChannelSet.BLOCKS:
            arr = getattr(ch, name)
            raw = name.encode()
            dims = arr.shape
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", len(dims)))
            f.write(struct.pack(f"<{len(dims)}Q", *dims))
            f.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())


def read_channels(path) -> tuple[ChannelSet, dict]:
    data = Path(path).read_bytes()
    if data[:8] != DUMP_MAGIC:
        raise ValueError("not a channel dump")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    (hlen,) = take("<I")
    meta = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    (count,) = take("<I")
    blocks = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = take("<B")
        dims = take(f"<{ndim}Q")
        size = int(np.prod(dims)) * 16
        blocks[name] = np.frombuffer(data, dtype="<c16", count=size // 16, offset=pos).reshape(dims).copy()
        pos += size
    return ChannelSet(**blocks), meta


def scenario_meta(geom: Geometry, fp: FadingParams, sys: SystemParams) -> dict:
    return {"geometry": asdict(geom), "fading": asdict(fp), "system": asdict(sys)}
