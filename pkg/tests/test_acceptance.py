"""End-to-end acceptance criteria.

Each test records one line in the terminal summary (see ``conftest.py``)
before asserting.  The multi-seed runs are shared through module fixtures;
the whole file takes about a quarter of an hour on one core.
"""

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

import conftest
from conftest import crandn
from risfd import experiments as ex
from risfd.active import f2_linearization, f2_value, grams_dict
from risfd.ao import check_monotone
from risfd.baselines import SchemeTag, run_noris, run_scheme
from risfd.model import GramPair, InfeasibleError, Scenario, build_lifts
from risfd.oracle import GridSpec, load_fixture, scenario_hash
from risfd.passive import eig1_linearization
from risfd.solver import (
    Affine,
    LogAffineSDP,
    Tolerances,
    hermitian_to_real_embedding,
    le,
    real_embedding_to_hermitian,
    solve,
)

pytestmark = pytest.mark.slow

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
# One seed beyond 20: on seed 3 the half-duplex demand is out of reach even
# at full power, and the benchmark means need 20 seeds feasible for all schemes.
SEEDS = tuple(range(1, 22))
RATE_MIN = 1.0
INFEASIBLE: dict = {}


def record(n: int, ok: bool, detail: str) -> None:
    conftest.ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def _run(cfg, scheme, value=None, key=None):
    """Feasible cells by seed; seeds with no feasible start go to ``INFEASIBLE``."""
    out = {}
    for seed in cfg.seeds:
        ch, sys = ex.channels_for(cfg, value, seed)
        try:
            state, trace = run_scheme(scheme, ch, sys, cfg.power, cfg.ao, ex.cell_rng(scheme, value, seed))
        except InfeasibleError:
            INFEASIBLE.setdefault(key or scheme, []).append(seed)
            continue
        out[seed] = (Scenario(ch, sys, cfg.power), state, trace)
    return out


@pytest.fixture(scope="module")
def default_cfg():
    cfg = ex.parse_config(f"[experiment]\nseeds = 1-{len(SEEDS)}\n")
    assert cfg.system.n_tx == 4 and cfg.system.m_ris == 40 and cfg.system.p_max_dbm == 30
    assert cfg.system.rate_min_bps_hz == RATE_MIN
    return cfg


@pytest.fixture(scope="module")
def suite(default_cfg):
    """Every scheme on the default scenario, plus the sum-rate design at 40 dBm."""
    runs = {tag: _run(default_cfg, tag) for tag in SchemeTag}
    hot = ex.parse_config(f"[experiment]\nseeds = 1-{len(SEEDS)}\n[system]\np_max_dbm = 40\n")
    runs["SR@40"] = _run(hot, SchemeTag.RIS_FD_SR, key="SR@40")
    return runs


@pytest.fixture(scope="module")
def tiny():
    cfg = ex.load_config(CONFIGS / "tiny.ini")
    return cfg, _run(cfg, SchemeTag.RIS_FD_EE)


def test_criterion_1_monotone_convergence(suite):
    runs = suite[SchemeTag.RIS_FD_EE]
    bad = [s for s, (_, _, tr) in runs.items() if not check_monotone(tr, 1e-5)[0]]
    slow = [s for s, (_, _, tr) in runs.items() if not tr.converged or tr.iterations > 10]
    iters = [tr.iterations for _, _, tr in runs.values()]
    ok = len(runs) == len(SEEDS) and not bad and not slow
    record(1, ok, f"{len(runs)} seeds, iterations {min(iters)}-{max(iters)}, "
                  f"non-monotone {bad}, unconverged or >10 iterations {slow}")
    assert ok


def test_criterion_2_oracle_equivalence(tiny):
    cfg, runs = tiny
    grid = GridSpec(**vars(cfg.oracle))
    assert (grid.phase_points, grid.power_points) == (64, 32)
    fixture = load_fixture()
    ratios = {}
    for seed, (sc, state, _) in runs.items():
        ref = fixture[scenario_hash(sc.ch, sc.sys, cfg.power, grid)]
        assert ref["seed"] == seed
        ratios[seed] = state.ee / ref["ee"]
    worst = min(ratios.values())
    ok = len(ratios) == 10 and worst >= 0.95
    record(2, ok, f"{len(ratios)} tiny instances, min EE/oracle = {worst:.4f}")
    assert ok


def test_criterion_3_rank_one_certification(suite):
    total = certified = 0
    for tag in (SchemeTag.RIS_FD_EE, SchemeTag.RIS_FD_SR, SchemeTag.RIS_HD_EE, "SR@40"):
        for _, _, tr in suite[tag].values():
            for rec in tr.records[1:]:
                total += 1
                certified += rec.certified
                if not rec.certified:
                    # never silently used: every uncertified phase step is flagged
                    assert any(f.endswith(f"uncertified@{rec.t}") for f in tr.flags)
    rate = certified / total
    ok = rate >= 0.95
    record(3, ok, f"{certified}/{total} phase steps certified ({100 * rate:.1f}%)")
    assert ok


def test_criterion_4_feasibility(suite, tiny):
    checked, failures = 0, []
    groups = list(suite.items()) + [("tiny", tiny[1])]
    for tag, runs in groups:
        for seed, (sc, state, _) in runs.items():
            checked += 1
            rates = np.asarray(state.rates)
            p = [np.linalg.norm(state.beams.w1) ** 2, np.linalg.norm(state.beams.w2) ** 2]
            ok = (np.all(rates >= np.asarray(sc.sys.rate_min) - 1e-6)
                  and np.all(np.array(p) <= np.asarray(sc.sys.p_max) + 1e-9))
            if tag not in (SchemeTag.RIS_HD_EE, SchemeTag.NORIS_FD_EE):
                # recompute FD rates from the reported beams and phases
                assert_allclose(rates, sc.effective_rates(state.beams, state.phases.theta), rtol=1e-10)
            if not ok:
                failures.append((str(tag), seed))
    ok = not failures
    record(4, ok, f"{checked} reported solutions, violations {failures}")
    assert ok


def test_criterion_5_benchmark_ordering(suite, default_cfg):
    # paired means over the seeds on which every scheme has a solution
    common = sorted(set.intersection(*(set(r) for r in suite.values())))
    mean = {tag: np.mean([suite[tag][s][1].ee for s in common]) for tag in suite}
    ee = mean[SchemeTag.RIS_FD_EE]
    others = [SchemeTag.RIS_FD_SR, SchemeTag.NORIS_FD_EE, SchemeTag.RIS_HD_EE]
    ordered = all(ee >= mean[t] for t in others)

    # NoRIS across the array-size sweep uses the same direct channels per seed
    sweep = ex.parse_config(f"[experiment]\nseeds = 1-{len(SEEDS)}\nsweep_axis = ris_elements\n"
                            "sweep_values = 10, 20, 30, 40, 50\n")
    noris = []
    for m in sweep.sweep_values:
        vals = []
        for seed in sweep.seeds:
            ch, sys = ex.channels_for(sweep, m, seed)
            vals.append(run_noris(ch, sys, sweep.power, sweep.ao)[0].ee)
        noris.append(np.mean(vals))
    flat = np.ptp(noris) <= 1e-9 * max(noris)
    deteriorates = mean["SR@40"] < mean[SchemeTag.RIS_FD_SR]

    ok = ordered and flat and deteriorates and len(common) >= 20
    detail = ", ".join(f"{t.value if isinstance(t, SchemeTag) else t}={mean[t]:.4g}" for t in mean)
    skipped = {str(getattr(k, "value", k)): v for k, v in INFEASIBLE.items()}
    record(5, ok, f"mean EE over {len(common)} seeds {detail}; infeasible {skipped}; "
                  f"NoRIS spread over M {np.ptp(noris):.2g}")
    assert ok


def test_criterion_6_linearizations(default_cfg):
    rng = np.random.default_rng(6)
    cfg = default_cfg
    ch, sys = ex.channels_for(cfg, None, 1)
    sc = Scenario(ch, sys, cfg.power)
    n, m = sys.n_tx, sys.m_ris

    def rand_gram(scale):
        B = crandn(rng, n, rng.integers(1, n + 1))
        W = B @ B.conj().T
        return scale * W / np.trace(W).real

    worst_tan = worst_grad = 0.0
    worst_gap = np.inf
    for _ in range(1000):
        lifts = build_lifts(ch, rng.uniform(0, 2 * np.pi, m))
        Wt = GramPair(rand_gram(rng.uniform(0, 1)), rand_gram(rng.uniform(0, 1)))
        W = GramPair(rand_gram(rng.uniform(0, 1)), rand_gram(rng.uniform(0, 1)))
        lin = f2_linearization(Wt, sc, lifts)
        f_t = f2_value(Wt, sc, lifts)
        worst_tan = max(worst_tan, abs(lin(grams_dict(Wt, (1, 2))) - f_t) / abs(f_t))
        worst_gap = min(worst_gap, lin(grams_dict(W, (1, 2))) - f2_value(W, sc, lifts))
    for _ in range(50):
        lifts = build_lifts(ch, rng.uniform(0, 2 * np.pi, m))
        Wt = GramPair(rand_gram(0.5), rand_gram(0.5))
        lin = f2_linearization(Wt, sc, lifts)
        D = {s: rand_gram(1.0) - rand_gram(1.0) for s in (1, 2)}
        h = 1e-6
        plus = GramPair(Wt.W1 + h * D[1], Wt.W2 + h * D[2])
        minus = GramPair(Wt.W1 - h * D[1], Wt.W2 - h * D[2])
        fd = (f2_value(plus, sc, lifts) - f2_value(minus, sc, lifts)) / (2 * h)
        an = sum(np.vdot(lin.terms[f"W{s}"], D[s]).real for s in (1, 2))
        worst_grad = max(worst_grad, abs(fd - an) / max(1.0, abs(an)))

    worst_mu_tan = 0.0
    worst_mu_gap = -np.inf
    for _ in range(1000):
        k = rng.integers(1, 6)
        Qs = []
        for _ in range(2):
            B = crandn(rng, 5, k)
            Q = B @ B.conj().T
            d = np.sqrt(np.diag(Q).real)
            Qs.append(Q / np.outer(d, d))
        mu1, lin = eig1_linearization(Qs[0])
        worst_mu_tan = max(worst_mu_tan, abs(lin({"Q": Qs[0]}) - np.linalg.eigvalsh(Qs[0])[-1]))
        worst_mu_gap = max(worst_mu_gap, lin({"Q": Qs[1]}) - np.linalg.eigvalsh(Qs[1])[-1])

    ok = (worst_tan <= 1e-12 and worst_gap >= -1e-12 and worst_grad <= 1e-5
          and worst_mu_tan <= 1e-12 and worst_mu_gap <= 1e-12)
    record(6, ok, f"f2' tangency {worst_tan:.1e}, bound slack {worst_gap:.1e}, gradient {worst_grad:.1e}; "
                  f"mu1 tangency {worst_mu_tan:.1e}, bound excess {worst_mu_gap:.1e}")
    assert ok


def test_criterion_7_solver_suite():
    one = np.eye(1)
    x = Affine(0.0, {"x": one})
    _, rep = solve(LogAffineSDP(blocks=[("x", 1)], log_terms=[(1.0, x)], ineq_constraints=[le(x, np.e)]))
    err_log = abs(rep.objective - 1.0)

    err_ray = 0.0
    rng = np.random.default_rng(7)
    for _ in range(5):
        A = crandn(rng, 4, 4)
        C = A + A.conj().T
        p = LogAffineSDP(blocks=[("X", 4)], linear_obj=Affine(0.0, {"X": C}),
                         eq_constraints=[Affine(-1.0, {"X": np.eye(4)})])
        _, rep = solve(p)
        err_ray = max(err_ray, abs(rep.objective - np.linalg.eigvalsh(C)[-1]))

    exact = True
    for n in range(1, 7):
        A = crandn(rng, n, n)
        H = A + A.conj().T
        exact &= np.array_equal(real_embedding_to_hermitian(hermitian_to_real_embedding(H)), H)

    B = crandn(rng, 3, 3)
    Apsd = B @ B.conj().T
    Cm = crandn(rng, 3, 3)
    Cm = 0.3 * (Cm + Cm.conj().T)
    p = LogAffineSDP(blocks=[("X", 3)], log_terms=[(1.0, Affine(0.5, {"X": Apsd}))],
                     linear_obj=Affine(0.0, {"X": Cm}),
                     ineq_constraints=[le(Affine(0.0, {"X": np.eye(3)}), 1.0)])
    X, rep = solve(p)
    base = p.objective(X)
    worst = -np.inf
    for _ in range(200):
        G = crandn(rng, 3, 3)
        Y = G @ G.conj().T
        Y /= np.trace(Y).real * rng.uniform(1.0, 2.0)
        worst = max(worst, p.objective({"X": X["X"] + 1e-4 * (Y - X["X"])}) - base)
    no_gain = worst <= Tolerances().stat

    ok = err_log <= 1e-7 and err_ray <= 1e-7 and exact and no_gain
    record(7, ok, f"log cap error {err_log:.1e}, Rayleigh error {err_ray:.1e}, "
                  f"embedding exact {exact}, best perturbation gain {worst:.1e}")
    assert ok


def test_criterion_8_determinism(tmp_path):
    cfg = ex.parse_config("[experiment]\nname = det\nschemes = RIS-FD-EE, NoRIS-FD-EE, RIS-HD-EE\n"
                          "seeds = 1-2\ntraces = yes\n[system]\nm_ris = 8\n")
    paths = []
    for k, jobs in enumerate((1, 2)):
        out = tmp_path / str(k)
        paths.append(ex.write_outputs(cfg, ex.run_cells(cfg, jobs=jobs), out))
    same = paths[0].read_bytes() == paths[1].read_bytes()
    traces = [sorted((p.parent / "traces").iterdir()) for p in paths]
    same_traces = [a.name for a in traces[0]] == [b.name for b in traces[1]] and all(
        a.read_bytes() == b.read_bytes() for a, b in zip(*traces))
    ok = same and same_traces
    record(8, ok, f"results CSV identical {same}, {len(traces[0])} traces identical {same_traces}")
    assert ok
