"""Experiment configuration, Monte Carlo cells and CSV output.

A config is an INI file whose keys carry their unit in the name
(``p_max_dbm``, ``noise_dbm``, ``p_cc_w`` ...).  Every omitted key falls
back to the default scenario.  An experiment is the product
``schemes x sweep values x seeds``; each cell is independent, draws its
channels from the seed alone and writes one results row (plus an optional
per-run trace).  Rows are collected in the canonical cell order, so the
output does not depend on the worker count or completion order.
"""

from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ao import AOConfig, initialize
from .baselines import SchemeTag, hd_slot, noris_scenario, run_scheme
from .channels import FadingParams, Geometry, generate_scenario
from .model import InfeasibleError, PowerModel, RecoveryError, Scenario, SystemParams, dbm_to_watt
from .passive import PHASE_TOL, PenaltySchedule
from .solver import Tolerances

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scheme", "sweep_value", "seed", "ee", "r1", "r2", "p_tot", "iterations", "flags")
SWEEP_AXES = ("none", "ris_elements", "p_max_dbm")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """System block in configuration units."""

    n_tx: int = 4
    m_ris: int = 40
    noise_dbm: float = -80.0
    rate_min_bps_hz: float = 1.0
    p_max_dbm: float = 30.0

    def params(self, sweep_axis: str = "none", value: float | None = None) -> SystemParams:
        base = self
        if sweep_axis == "ris_elements":
            if value != int(value):
                raise ValueError(f"ris_elements value {value} is not an integer")
            base = replace(base, m_ris=int(value))
        elif sweep_axis == "p_max_dbm":
            base = replace(base, p_max_dbm=float(value))
        return SystemParams(
            n_tx=base.n_tx,
            m_ris=base.m_ris,
            noise_power=float(dbm_to_watt(base.noise_dbm)),
            rate_min=base.rate_min_bps_hz,
            p_max=float(dbm_to_watt(base.p_max_dbm)),
        )


@dataclass(frozen=True)
class OracleGrid:
    power_points: int = 32
    phase_points: int = 64
    direction_points: int = 8


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    schemes: tuple[SchemeTag, ...] = tuple(SchemeTag)
    sweep_axis: str = "none"
    sweep_values: tuple[float, ...] = ()
    seeds: tuple[int, ...] = (1,)
    traces: bool = True
    geometry: Geometry = Geometry()
    fading: FadingParams = FadingParams()
    system: SystemSpec = SystemSpec()
    power: PowerModel = PowerModel()
    ao: AOConfig = AOConfig()
    oracle: OracleGrid = OracleGrid()

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError("sweep_values must be nonempty when a sweep axis is set")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.name):
            raise ConfigError(f"name {self.name!r} must be a plain file stem")
        for value in self.points:
            self.system.params(self.sweep_axis, value)

    @property
    def points(self) -> tuple[float | None, ...]:
        return tuple(self.sweep_values) if self.sweep_axis != "none" else (None,)

    def cells(self) -> list[tuple[SchemeTag, float | None, int]]:
        return [(s, v, seed) for s in self.schemes for v in self.points for seed in self.seeds]


# ---------------------------------------------------------------------------
# parsing

# (section, key) -> (target, field, converter)
_KEYS = {
    ("experiment", "name"): ("top", "name", str),
    ("experiment", "schemes"): ("top", "schemes", lambda s: tuple(SchemeTag.parse(x) for x in _split(s))),
    ("experiment", "sweep_axis"): ("top", "sweep_axis", str),
    ("experiment", "sweep_values"): ("top", "sweep_values", lambda s: tuple(float(x) for x in _split(s))),
    ("experiment", "seeds"): ("top", "seeds", lambda s: parse_seeds(s)),
    ("experiment", "traces"): ("top", "traces", lambda s: _bool(s)),
    ("geometry", "s1_x_m"): ("geometry", ("pos_s1", 0), float),
    ("geometry", "s1_y_m"): ("geometry", ("pos_s1", 1), float),
    ("geometry", "s2_x_m"): ("geometry", ("pos_s2", 0), float),
    ("geometry", "s2_y_m"): ("geometry", ("pos_s2", 1), float),
    ("geometry", "ris_x_m"): ("geometry", ("pos_ris", 0), float),
    ("geometry", "ris_y_m"): ("geometry", ("pos_ris", 1), float),
    ("fading", "pl0_db"): ("fading", "pl0_db", float),
    ("fading", "d0_m"): ("fading", "d0", float),
    ("fading", "exp_ris"): ("fading", "exp_ris", float),
    ("fading", "exp_direct"): ("fading", "exp_direct", float),
    ("fading", "rician_k_si_db"): ("fading", "rician_k_si_db", float),
    ("fading", "rician_k_other_db"): ("fading", "rician_k_other_db", float),
    ("fading", "si_pathloss_db"): ("fading", "si_pathloss_db", float),
    ("fading", "los_seed"): ("fading", "los_seed", int),
    ("system", "n_tx"): ("system", "n_tx", int),
    ("system", "m_ris"): ("system", "m_ris", int),
    ("system", "noise_dbm"): ("system", "noise_dbm", float),
    ("system", "rate_min_bps_hz"): ("system", "rate_min_bps_hz", float),
    ("system", "p_max_dbm"): ("system", "p_max_dbm", float),
    ("power", "xi"): ("power", "xi", float),
    ("power", "p_cc_w"): ("power", "p_cc", float),
    ("power", "p_s_w"): ("power", "p_s", float),
    ("power", "p_0_w"): ("power", "p_0", float),
    ("algorithm", "eps_d"): ("ao", "eps_d", float),
    ("algorithm", "t_max"): ("ao", "t_max", int),
    ("algorithm", "n_rand"): ("ao", "n_rand", int),
    ("algorithm", "init"): ("ao", "init", str),
    ("algorithm", "init_seed"): ("ao", "init_seed", int),
    ("algorithm", "beta0"): ("schedule", "beta0", float),
    ("algorithm", "penalty_c"): ("schedule", "c", float),
    ("algorithm", "eps1"): ("schedule", "eps1", float),
    ("algorithm", "eps2"): ("schedule", "eps2", float),
    ("algorithm", "k_max"): ("schedule", "k_max", int),
    ("algorithm", "outer_max"): ("schedule", "outer_max", int),
    ("algorithm", "feas_tol"): ("tol", "feas", float),
    ("algorithm", "stat_tol"): ("tol", "stat", float),
    ("algorithm", "phase_stat_tol"): ("phase_tol", "stat", float),
    ("oracle", "power_points"): ("oracle", "power_points", int),
    ("oracle", "phase_points"): ("oracle", "phase_points", int),
    ("oracle", "direction_points"): ("oracle", "direction_points", int),
}


def _split(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"1,3,5-8"`` -> ``(1, 3, 5, 6, 7, 8)``; order kept, duplicates dropped."""
    out: list[int] = []
    for part in _split(text):
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", part)
        vals = range(int(m[1]), int(m[2]) + 1) if m else [int(part)]
        out.extend(v for v in vals if v not in out)
    if not out:
        raise ValueError("empty seed list")
    return tuple(out)


def parse_config(text: str = "", overrides: dict[tuple[str, str], str] | None = None) -> ExperimentConfig:
    """Build a config from INI text plus ``(section, key) -> value`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    items = {(sec, key): val for sec in parser.sections() for key, val in parser.items(sec)}
    items.update(overrides or {})

    parts: dict[str, dict] = {k: {} for k in ("top", "geometry", "fading", "system", "power", "ao",
                                              "schedule", "tol", "phase_tol", "oracle")}
    pos = {f"pos_{n}": list(getattr(Geometry(), f"pos_{n}")) for n in ("s1", "s2", "ris")}
    for (sec, key), raw in items.items():
        if (sec, key) not in _KEYS:
            raise ConfigError(f"unknown key [{sec}] {key}")
        target, name, conv = _KEYS[(sec, key)]
        try:
            val = conv(raw)
        except ValueError as exc:
            raise ConfigError(f"[{sec}] {key}: {exc}") from exc
        if target == "geometry":
            pos[name[0]][name[1]] = val
        else:
            parts[target][name] = val
    try:
        ao = AOConfig(
            schedule=PenaltySchedule(**parts["schedule"]),
            tol=Tolerances(**parts["tol"]),
            phase_tol=Tolerances(**{"stat": PHASE_TOL.stat, **parts["phase_tol"]}),
            **parts["ao"],
        )
        return ExperimentConfig(
            geometry=Geometry(**{k: tuple(v) for k, v in pos.items()}),
            fading=FadingParams(**parts["fading"]),
            system=SystemSpec(**parts["system"]),
            power=PowerModel(**parts["power"]),
            ao=ao,
            oracle=OracleGrid(**parts["oracle"]),
            **parts["top"],
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, overrides)


# ---------------------------------------------------------------------------
# cells


@dataclass
class CellResult:
    scheme: SchemeTag
    sweep_value: float | None
    seed: int
    ee: float = math.nan
    r1: float = math.nan
    r2: float = math.nan
    p_tot: float = math.nan
    iterations: int = 0
    flags: list[str] = field(default_factory=list)
    trace_csv: str = ""
    failed: bool = False

    def row(self) -> list[str]:
        sweep = "" if self.sweep_value is None else fmt(self.sweep_value)
        return [self.scheme.value, sweep, str(self.seed), fmt(self.ee), fmt(self.r1), fmt(self.r2),
                fmt(self.p_tot), str(self.iterations), ";".join(self.flags)]


def fmt(x: float) -> str:
    return f"{x:.12g}"


def channels_for(cfg: ExperimentConfig, value, seed: int):
    sys = cfg.system.params(cfg.sweep_axis, value)
    ch = generate_scenario(cfg.geometry, replace(cfg.fading, seed=seed), sys)
    return ch, sys


def cell_rng(scheme: SchemeTag, value, seed: int) -> np.random.Generator:
    """Recovery randomness keyed by the cell, independent of run order."""
    idx = list(SchemeTag).index(scheme)
    vkey = 0 if value is None else int(round(float(value) * 1000)) & 0xFFFFFFFF
    return np.random.default_rng(np.random.SeedSequence([seed, idx, vkey]))


def run_cell(cfg: ExperimentConfig, scheme: SchemeTag, value, seed: int) -> CellResult:
    out = CellResult(scheme, value, seed)
    try:
        ch, sys = channels_for(cfg, value, seed)
        state, trace = run_scheme(scheme, ch, sys, cfg.power, cfg.ao, cell_rng(scheme, value, seed))
    except InfeasibleError as exc:
        out.flags.append("infeasible")
        log.info("%s value=%s seed=%d infeasible: %s", scheme.value, value, seed, exc)
        return out
    except (RecoveryError, ValueError, np.linalg.LinAlgError) as exc:
        out.flags.append(f"error:{type(exc).__name__}")
        out.failed = True
        log.warning("%s value=%s seed=%d failed: %s", scheme.value, value, seed, exc)
        return out
    out.ee = state.ee
    out.r1, out.r2 = state.rates
    out.p_tot = state.p_tot
    out.iterations = trace.iterations
    out.flags = list(trace.flags) + ([] if trace.converged else ["not_converged"])
    if cfg.traces:
        out.trace_csv = trace.to_csv()
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_cells(cfg: ExperimentConfig, jobs: int = 1) -> list[CellResult]:
    """All cells of ``cfg``, in the canonical (scheme, sweep, seed) order."""
    tasks = [(cfg, *cell) for cell in cfg.cells()]
    if jobs <= 1:
        return [_run_cell_args(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map keeps submission order, so the collector sees a fixed sequence
        return list(pool.map(_run_cell_args, tasks))


def results_csv(results: list[CellResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow(r.row())
    return buf.getvalue()


def trace_name(cfg: ExperimentConfig, r: CellResult) -> str:
    sweep = "x" if r.sweep_value is None else fmt(r.sweep_value)
    return f"{cfg.name}__{r.scheme.value}__{sweep}__{r.seed}.csv"


def write_outputs(cfg: ExperimentConfig, results: list[CellResult], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}.csv"
    path.write_text(results_csv(results))
    if cfg.traces:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in results:
            if r.trace_csv:
                (tdir / trace_name(cfg, r)).write_text(r.trace_csv)
    return path


# ---------------------------------------------------------------------------
# validation


def parameter_table(cfg: ExperimentConfig) -> list[tuple[str, str, str]]:
    """(name, configured value, linear value) rows."""
    s = cfg.system
    f = cfg.fading
    g = cfg.geometry
    rows = [
        ("n_tx", str(s.n_tx), ""),
        ("m_ris", str(s.m_ris), ""),
        ("noise_dbm", fmt(s.noise_dbm), f"{fmt(float(dbm_to_watt(s.noise_dbm)))} W"),
        ("p_max_dbm", fmt(s.p_max_dbm), f"{fmt(float(dbm_to_watt(s.p_max_dbm)))} W"),
        ("rate_min_bps_hz", fmt(s.rate_min_bps_hz), ""),
        ("pl0_db", fmt(f.pl0_db), fmt(10 ** (f.pl0_db / 10))),
        ("si_pathloss_db", fmt(f.si_pathloss_db), fmt(10 ** (f.si_pathloss_db / 10))),
        ("rician_k_si_db", fmt(f.rician_k_si_db), fmt(10 ** (f.rician_k_si_db / 10))),
        ("rician_k_other_db", fmt(f.rician_k_other_db), fmt(10 ** (f.rician_k_other_db / 10))),
        ("exp_ris", fmt(f.exp_ris), ""),
        ("exp_direct", fmt(f.exp_direct), ""),
        ("d_s1_s2_m", fmt(g.distance("s1", "s2")), ""),
        ("d_s1_ris_m", fmt(g.distance("s1", "ris")), ""),
        ("d_s2_ris_m", fmt(g.distance("s2", "ris")), ""),
        ("xi", fmt(cfg.power.xi), ""),
        ("p_cc_w", fmt(cfg.power.p_cc), ""),
        ("p_s_w", fmt(cfg.power.p_s), ""),
        ("p_0_w", fmt(cfg.power.p_0), ""),
        ("static_power_w", fmt(cfg.power.static(s.m_ris)), ""),
    ]
    return rows


def validate_text(text: str, overrides=None) -> tuple[list[str], list[str], ExperimentConfig | None]:
    """Check a config; returns ``(errors, warnings, cfg)``."""
    errors: list[str] = []
    warnings: list[str] = []
    try:
        cfg = parse_config(text, overrides)
    except (ConfigError, ValueError) as exc:
        return [str(exc)], warnings, None
    seed = cfg.seeds[0]
    for value in cfg.points:
        try:
            ch, sys = channels_for(cfg, value, seed)
        except ValueError as exc:
            errors.append(f"sweep value {value}: {exc}")
            continue
        for scheme in cfg.schemes:
            if not _init_feasible(scheme, ch, sys, cfg):
                where = "" if value is None else f" at {cfg.sweep_axis}={fmt(value)}"
                warnings.append(f"{scheme.value}: no feasible initialization for seed {seed}{where}")
    return errors, warnings, cfg


def _init_feasible(scheme: SchemeTag, ch, sys, cfg: ExperimentConfig) -> bool:
    if scheme is SchemeTag.NORIS_FD_EE:
        scs = [noris_scenario(ch, sys, cfg.power)]
    elif scheme is SchemeTag.RIS_HD_EE:
        scs = [hd_slot(ch, sys, cfg.power, i) for i in (1, 2)]
    else:
        scs = [Scenario(ch, sys, cfg.power)]
    try:
        for sc in scs:
            initialize(sc, cfg.ao)
    except InfeasibleError:
        return False
    return True
