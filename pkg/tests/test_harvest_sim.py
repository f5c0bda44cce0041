import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renewalloc.errors import ParameterError
from renewalloc.harvest_sim import (
    SLOT_HEADER,
    USER_HEADER,
    Battery,
    DiurnalHarvest,
    MarkovChannel,
    SimConfig,
    SimState,
    TraceHarvest,
    birth_death_chain,
    channel_step,
    harvest_at,
    read_trace,
    sim_run,
    sim_step,
    write_results,
)


def make_state(harvest, level=0.0, capacity=1e4, n_users=3, seed=7, config=None):
    rng = np.random.default_rng(seed)
    chain = birth_death_chain(states=rng.integers(0, 8, n_users))
    return SimState(Battery(level, capacity), harvest, chain, rng, config=config or SimConfig())


class TestBattery:
    def test_bounds(self):
        with pytest.raises(ParameterError):
            Battery(5.0, 4.0)
        with pytest.raises(ParameterError):
            Battery(-1.0, 4.0)
        with pytest.raises(ParameterError):
            Battery(0.0, 0.0)


class TestHarvest:
    def test_trace_replay(self):
        h = TraceHarvest((5, 0, 3))
        assert [harvest_at(h, t) for t in range(5)] == [5.0, 0.0, 3.0, 0.0, 0.0]

    def test_trace_rejects_negative(self):
        with pytest.raises(ParameterError):
            TraceHarvest((1.0, -1.0))

    def test_diurnal_peak(self):
        h = DiurnalHarvest(h_peak=20.0, day_length=24, daylight_fraction=0.5, tau=2.0)
        assert harvest_at(h, 6) == pytest.approx(40.0, rel=1e-15)
        assert harvest_at(h, 30) == harvest_at(h, 6)

    def test_diurnal_night(self):
        h = DiurnalHarvest(day_length=24, daylight_fraction=0.5)
        assert harvest_at(h, 0) == 0.0
        assert all(harvest_at(h, t) == 0.0 for t in range(12, 24))
        assert all(harvest_at(h, t) > 0 for t in range(1, 12))

    def test_noise_bounds_and_seed(self):
        h = DiurnalHarvest(noise_amplitude=0.3, seed=11)
        clean = DiurnalHarvest()
        for t in range(1, 12):
            ratio = harvest_at(h, t) / harvest_at(clean, t)
            assert 0.7 <= ratio <= 1.3
        assert [harvest_at(h, t) for t in range(48)] == [harvest_at(DiurnalHarvest(noise_amplitude=0.3, seed=11), t) for t in range(48)]
        assert harvest_at(DiurnalHarvest(noise_amplitude=0.3, seed=12), 5) != harvest_at(h, 5)

    @given(st.integers(0, 10_000), st.floats(0, 0.99), st.floats(0.05, 1.0))
    def test_never_negative(self, t, noise, frac):
        assert harvest_at(DiurnalHarvest(noise_amplitude=noise, daylight_fraction=frac), t) >= 0

    def test_negative_slot(self):
        with pytest.raises(ParameterError):
            harvest_at(TraceHarvest((1.0,)), -1)

    @pytest.mark.parametrize("kw", [{"day_length": 0}, {"daylight_fraction": 0.0}, {"noise_amplitude": 1.0}, {"h_peak": -1.0}])
    def test_bad_diurnal(self, kw):
        with pytest.raises(ParameterError):
            DiurnalHarvest(**kw)


class TestTraceFile:
    def test_read_any_order(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("slot,harvest_joules\n2,3.5\n0,1\n")
        assert read_trace(path).trace == (1.0, 0.0, 3.5)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("t,h\n0,1\n")
        with pytest.raises(ParameterError):
            read_trace(path)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "trace.csv"
        path.write_text("slot,harvest_joules\n0,1\n1,abc\n")
        with pytest.raises(ParameterError, match=":3:"):
            read_trace(path)


class TestChannel:
    def test_rows_validated(self):
        with pytest.raises(ParameterError):
            MarkovChannel([[0.5, 0.4], [0.5, 0.5]], [0.5, 1.0], [0])
        with pytest.raises(ParameterError):
            MarkovChannel(np.eye(2), [1.0, 0.5], [0])

    def test_default_chain(self):
        ch = birth_death_chain()
        assert ch.q_levels.tolist() == pytest.approx(np.linspace(0.05, 1.0, 8).tolist())
        assert np.allclose(ch.transition.sum(axis=1), 1.0, atol=1e-12)
        assert ch.transition[0, 0] == pytest.approx(0.9)
        assert ch.transition[3, 3] == pytest.approx(0.8)

    def test_identity_keeps_states(self):
        ch = MarkovChannel(np.eye(3), [0.2, 0.5, 1.0], [0, 2, 1])
        rng = np.random.default_rng(0)
        for _ in range(10):
            ch.states = channel_step(ch, rng)
        assert ch.states.tolist() == [0, 2, 1]

    def test_flip_chain_alternates(self):
        ch = MarkovChannel([[0.0, 1.0], [1.0, 0.0]], [0.5, 1.0], [0, 1])
        rng = np.random.default_rng(0)
        seen = []
        for _ in range(4):
            ch.states = channel_step(ch, rng)
            seen.append(ch.states.tolist())
        assert seen == [[1, 0], [0, 1], [1, 0], [0, 1]]

    def test_long_run_frequencies(self):
        P = np.array([[0.7, 0.2, 0.1], [0.3, 0.4, 0.3], [0.05, 0.15, 0.8]])
        # stationary vector as the left eigenvector for eigenvalue 1
        w, v = np.linalg.eig(P.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1))])
        pi /= pi.sum()
        ch = MarkovChannel(P, [0.2, 0.6, 1.0], np.zeros(10, dtype=int))
        assert ch.stationary() == pytest.approx(pi, abs=1e-12)
        rng = np.random.default_rng(2024)
        counts = np.zeros(3)
        for _ in range(100_000):
            ch.states = channel_step(ch, rng)
            counts += np.bincount(ch.states, minlength=3)
        freq = counts / counts.sum()
        assert freq == pytest.approx(pi, abs=0.01)

    def test_birth_death_is_uniform_in_the_long_run(self):
        ch = birth_death_chain(n_users=1)
        assert ch.stationary() == pytest.approx(np.full(8, 1 / 8), abs=1e-12)


class TestStep:
    def test_spends_whole_battery(self):
        state = make_state(TraceHarvest(()), level=50.0)
        res = sim_step(state)
        assert res.budget == 50.0 and res.spent == pytest.approx(50.0, rel=1e-12)
        assert state.battery.level == pytest.approx(0.0, abs=1e-12)

    def test_capacity_clamp(self):
        state = make_state(TraceHarvest((1e6,)), level=0.0, capacity=100.0)
        sim_step(state)
        assert state.battery.level == 100.0

    def test_budget_cap(self):
        state = make_state(TraceHarvest(()), level=500.0)
        assert sim_step(state).budget == 60.0
        state = make_state(TraceHarvest(()), level=500.0, config=SimConfig(cap_budget=False))
        assert sim_step(state).budget == 500.0

    def test_harvest_arrives_after_allocation(self):
        state = make_state(TraceHarvest((30.0,)), level=0.0)
        res = sim_step(state)
        assert res.budget == 0.0 and res.admitted == 0
        assert state.battery.level == 30.0


class TestRun:
    def test_single_slot(self):
        assert len(sim_run(make_state(DiurnalHarvest()), 1)) == 1

    def test_rejects_zero_slots(self):
        with pytest.raises(ParameterError):
            sim_run(make_state(DiurnalHarvest()), 0)

    def test_zero_harvest(self):
        out = sim_run(make_state(TraceHarvest(())), 20)
        assert all(r.admitted == 0 and r.total_utility == 0.0 and not r.r.any() for r in out)

    def test_deterministic(self):
        h = DiurnalHarvest(noise_amplitude=0.2, seed=5)
        a = sim_run(make_state(h, level=10.0, seed=3), 100)
        b = sim_run(make_state(h, level=10.0, seed=3), 100)
        for x, y in zip(a, b):
            assert (x.slot, x.harvest, x.budget, x.admitted, x.total_utility, x.battery_after) == (
                y.slot, y.harvest, y.budget, y.admitted, y.total_utility, y.battery_after)
            assert np.array_equal(x.r, y.r) and np.array_equal(x.q, y.q)

    def test_prefix_sums_without_spending(self):
        h = DiurnalHarvest(noise_amplitude=0.1, seed=1)
        state = make_state(h, capacity=math.inf, config=SimConfig(p_max=0.0))
        out = sim_run(state, 72)
        expected = np.cumsum([harvest_at(h, t) for t in range(72)])
        assert [r.battery_after for r in out] == pytest.approx(expected.tolist(), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1.0, 500.0), st.floats(0.0, 0.9))
    def test_conservation_and_bounds(self, seed, capacity, noise):
        h = DiurnalHarvest(h_peak=40.0, noise_amplitude=noise, seed=seed)
        state = make_state(h, level=capacity / 2, capacity=capacity, seed=seed)
        for res in sim_run(state, 48):
            assert res.budget <= res.battery_before
            assert res.spent <= res.battery_before
            assert 0 <= res.battery_after <= capacity
            expected = min(res.battery_before - res.spent + res.harvest, capacity)
            assert res.battery_after == pytest.approx(expected, abs=1e-9)

    def test_panel_and_power_cap_give_scarcity(self):
        state = make_state(DiurnalHarvest(), level=0.0, n_users=10)
        out = sim_run(state, 240)
        mean_budget = np.mean([r.budget for r in out])
        mean_demand = np.mean([r.demand for r in out])
        assert mean_budget < mean_demand
        assert all(r.budget < r.demand for r in out)


def test_write_results(tmp_path):
    out = sim_run(make_state(DiurnalHarvest(), level=20.0), 5)
    slots, users = tmp_path / "slots.csv", tmp_path / "users.csv"
    write_results(out, slots, users, p=0.8, rmid=10.0)
    lines = slots.read_bytes().split(b"\n")
    assert lines[0].decode() == ",".join(SLOT_HEADER)
    assert b"\r" not in slots.read_bytes()
    assert len([x for x in lines if x]) == 6
    ulines = users.read_text().splitlines()
    assert ulines[0] == ",".join(USER_HEADER)
    assert len(ulines) == 1 + 5 * 3
