from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_channels
from risfd.ao import AOConfig
from risfd.baselines import (
    SchemeTag,
    hd_slot,
    noris_scenario,
    run_ee,
    run_hd,
    run_noris,
    run_scheme,
    run_sr,
)
from risfd.channels import FadingParams, Geometry, generate_scenario
from risfd.model import BeamPair, PowerModel, SystemParams

SYS = SystemParams(2, 3, 0.1, 0.5, 2.0)


def channels(seed, si=0.3):
    return random_channels(np.random.default_rng(seed), 2, 3, scale=1.0, si_scale=si)


class TestTags:
    @pytest.mark.parametrize("text, tag", [("RIS-FD-EE", SchemeTag.RIS_FD_EE), ("ris_hd_ee", SchemeTag.RIS_HD_EE),
                                           ("NORIS-FD-EE", SchemeTag.NORIS_FD_EE), (" RIS-FD-SR", SchemeTag.RIS_FD_SR)])
    def test_parse(self, text, tag):
        assert SchemeTag.parse(text) is tag

    def test_unknown(self):
        with pytest.raises(ValueError):
            SchemeTag.parse("RIS-FD-XX")


class TestSumRate:
    def test_alpha_pinned(self):
        _, tr = run_sr(channels(0), SYS, PowerModel())
        assert all(r.alpha == 0.0 for r in tr.records)
        assert tr.objective == "rate"

    def test_rate_not_below_ee_design(self):
        gaps = []
        for seed in range(5):
            ch = channels(seed)
            ee_state, _ = run_ee(ch, SYS, PowerModel())
            sr_state, _ = run_sr(ch, SYS, PowerModel())
            gaps.append(sum(sr_state.rates) - sum(ee_state.rates))
            assert sr_state.ee <= ee_state.ee * (1 + 1e-3)
        assert np.mean(gaps) >= -1e-4


class TestNoRIS:
    def test_power_model_drops_ris_static(self):
        sc = noris_scenario(channels(1), SYS, PowerModel())
        assert sc.m_ris == 0
        pm = PowerModel()
        assert_allclose(sc.static_power, pm.static(0))
        assert_allclose(pm.static(3) - pm.static(0), 3 * pm.p_s)

    def test_independent_of_array_size(self):
        out = []
        for m in (10, 30):
            sys = SystemParams(4, m, 1e-11, 1.0, 1.0)
            ch = generate_scenario(Geometry(), FadingParams(seed=3), sys)
            out.append(run_noris(ch, sys, PowerModel())[0].ee)
        assert_allclose(out[0], out[1], rtol=1e-12)

    def test_matches_ee_design_with_zero_ris(self):
        ch = channels(2)
        z = {k: np.zeros_like(getattr(ch, k)) for k in ("h_s1r", "h_s2r", "h_rs1", "h_rs2")}
        pm = PowerModel(p_s=0.0)
        a, _ = run_ee(replace(ch, **z), SYS, pm)
        b, _ = run_noris(ch, SYS, pm)
        assert_allclose(a.ee, b.ee, rtol=1e-6)


class TestHalfDuplex:
    def test_slot_accounting(self):
        ch = channels(3)
        pm = PowerModel()
        sc = hd_slot(ch, SYS, pm, 1)
        b = BeamPair(np.zeros(2), np.array([1.0, 0.0]))
        assert_allclose(sc.power(b.to_grams()), 0.5 * 1.0 + 0.5 * (3 * pm.p_s + pm.p_0))
        r = sc.effective_rates(b.to_grams(), np.zeros(3))
        assert r[1] == 0.0 and r[0] > 0
        # demand is checked against the halved rate
        assert_allclose(sc.sinr_target(1), 2 ** (SYS.rate_min[0] / 0.5) - 1)

    def test_self_interference_has_no_effect(self):
        ch = channels(4)
        a, _ = run_hd(replace(ch, h_s1s1=0 * ch.h_s1s1, h_s2s2=0 * ch.h_s2s2), SYS, PowerModel())
        b, _ = run_hd(replace(ch, h_s1s1=50 * ch.h_s1s1, h_s2s2=50 * ch.h_s2s2), SYS, PowerModel())
        assert_allclose(a.ee, b.ee, rtol=1e-12)

    def test_combined_state(self):
        st, tr = run_hd(channels(5), SYS, PowerModel())
        assert_allclose(st.ee, sum(st.rates) / st.p_tot, rtol=1e-12)
        assert set(st.slot_phases) == {1, 2}
        assert all(r >= 0.5 - 1e-6 for r in st.rates)
        assert np.isnan(tr.records[-1].alpha)


def test_dispatch():
    st, _ = run_scheme("NoRIS-FD-EE", channels(6), SYS, PowerModel(), AOConfig(t_max=2))
    assert st.phases.theta.size == 0
