from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slembed.dynamics import (
    FeedbackConfig,
    SimConfig,
    Trajectory,
    default_t_end,
    detect_steady,
    initial_phases,
    initial_state,
    integrate_kuramoto,
    integrate_sl,
    integrate_sl_feedback,
    polar_rhs,
    simulate_batch,
    sl_rhs,
    stable_dt,
    write_trajectory_csv,
)
from slembed.errors import DivergenceError, InvalidArgumentError
from slembed.graphs import (
    ConstantFM,
    NetworkSpec,
    RingSpec,
    UniformInterval,
    build_complete,
    build_ring,
    embed_triad,
    triad_frequencies,
)
from slembed.metrics import xy_energy

RK4 = dict(method="rk4")


def pair(j):
    return NetworkSpec([[0.0, j], [j, 0.0]])


def test_simconfig_validation():
    with pytest.raises(InvalidArgumentError):
        SimConfig(dt=1.0, t_end=0.5)
    with pytest.raises(InvalidArgumentError):
        SimConfig(abs_tol=0)
    with pytest.raises(InvalidArgumentError):
        SimConfig(record_stride=0)
    with pytest.raises(InvalidArgumentError):
        FeedbackConfig(-0.1)
    with pytest.raises(InvalidArgumentError):
        FeedbackConfig(0.1, rho_target=0.0)


def test_default_t_end():
    assert default_t_end(1.0) == 50
    assert default_t_end(10.0, 20.0) == 50
    assert default_t_end(0.1, 10.0) == pytest.approx(500)
    assert default_t_end() == 50


def test_initial_state_seeded():
    a = initial_state(8, 3)
    assert np.allclose(np.abs(a), 1e-3)
    assert np.array_equal(a, initial_state(8, 3))
    assert np.allclose(initial_state(8, 3, 1.0), np.exp(1j * initial_phases(8, 3)), atol=1e-15)


# -- analytic fixed points ----------------------------------------------------


def test_isolated_oscillator_decays():
    net = NetworkSpec(np.zeros((1, 1)))
    tr = integrate_sl(net, SimConfig(t_end=10.0, **RK4), psi0=[0.1])
    rho = tr.amplitudes[:, 0]
    assert np.all(np.diff(rho) <= 0)
    # d rho/dt = -rho^3
    exact = 0.1 / np.sqrt(1 + 2 * 0.01 * tr.times)
    assert np.allclose(rho, exact, rtol=1e-8)


@pytest.mark.parametrize("method", ["rk4", "rk45"])
def test_fm_pair_fixed_point(method):
    J = 2.0
    tr = integrate_sl(pair(J), SimConfig(t_end=60.0, method=method), seed=4)
    assert np.allclose(np.abs(tr.final_state), np.sqrt(J), rtol=1e-6)
    d = np.angle(tr.final_state[0] * np.conj(tr.final_state[1]))
    assert abs(d) < 1e-6
    assert tr.reached_steady


def test_afm_pair_fixed_point():
    tr = integrate_sl(pair(-1.0), SimConfig(t_end=60.0, **RK4), seed=2)
    assert np.allclose(np.abs(tr.final_state), 1.0, rtol=1e-6)
    d = np.angle(tr.final_state[0] * np.conj(tr.final_state[1]))
    assert abs(abs(d) - np.pi) < 1e-6


def test_zero_coupling_amplitudes_non_increasing():
    net = NetworkSpec(np.zeros((4, 4)), [0.3, -1.0, 2.0, 0.0])
    tr = integrate_sl(net, SimConfig(t_end=5.0, init_amplitude=0.5, **RK4), seed=1)
    assert np.all(np.diff(tr.amplitudes, axis=0) <= 1e-15)


# -- algebraic identities -----------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 8))
def test_cartesian_polar_identity(seed, n):
    rng = np.random.default_rng(seed)
    net = build_complete(n, UniformInterval(-1, 1), seed)
    omega = rng.normal(size=n)
    rho = rng.uniform(0.01, 3.0, n)
    theta = rng.uniform(-np.pi, np.pi, n)
    psi = rho * np.exp(1j * theta)
    dpsi = sl_rhs(psi, net, omega)
    drho, dtheta = polar_rhs(rho, theta, net, omega)
    # d psi = (d rho + i rho d theta) e^{i theta}
    rebuilt = (drho + 1j * rho * dtheta) * np.exp(1j * theta)
    scale = np.maximum(np.abs(dpsi), 1.0)
    assert np.all(np.abs(rebuilt - dpsi) / scale < 1e-10)


def test_gauge_covariance():
    n = 4
    net = build_complete(n, UniformInterval(-1, 1), 21)
    omega = triad_frequencies(n, 0.5, 21)
    Omega = 0.8
    cfg = SimConfig(t_end=30.0, abs_tol=1e-11, rel_tol=1e-11)
    a = integrate_sl(net, cfg, 5, frequencies=omega)
    b = integrate_sl(net, cfg, 5, frequencies=omega + Omega)
    assert np.allclose(np.abs(a.final_state), np.abs(b.final_state), atol=1e-6)
    da = a.final_state * np.conj(a.final_state[0])
    db = b.final_state * np.conj(b.final_state[0])
    assert np.allclose(np.angle(da), np.angle(db), atol=1e-6)
    # the whole state is co-rotated by exp(-i Omega t)
    assert np.allclose(b.final_state, a.final_state * np.exp(-1j * Omega * a.times[-1]), atol=1e-6)


def test_rk4_and_rk45_agree_on_fm_complete():
    n = 5
    net = build_complete(n, ConstantFM(1.0))
    omega = triad_frequencies(n, 0.3, 2)
    fixed = integrate_sl(net, SimConfig(t_end=40.0, dt=0.005, **RK4), 2, frequencies=omega)
    adapt = integrate_sl(net, SimConfig(t_end=40.0, abs_tol=1e-10, rel_tol=1e-10), 2, frequencies=omega)
    pf = np.angle(fixed.final_state * np.conj(fixed.final_state[0]))
    pa = np.angle(adapt.final_state * np.conj(adapt.final_state[0]))
    assert np.max(np.abs(pf - pa)) < 1e-5


def test_determinism():
    net = build_complete(6, UniformInterval(-1, 1), 3)
    for cfg in (SimConfig(t_end=5.0, **RK4), SimConfig(t_end=5.0)):
        a = integrate_sl(net, cfg, 9)
        b = integrate_sl(net, cfg, 9)
        assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)


def test_batch_matches_single_runs():
    nets = [build_complete(5, UniformInterval(-1, 1), s) for s in range(3)]
    cfg = SimConfig(t_end=5.0, **RK4)
    psi0 = np.stack([initial_state(5, s) for s in range(3)])
    w = np.stack([triad_frequencies(5, 0.2, s) for s in range(3)])
    bt = simulate_batch("sl", [n.couplings for n in nets], w, psi0, cfg)
    for b in range(3):
        single = integrate_sl(nets[b], cfg, b, frequencies=w[b])
        assert np.allclose(bt.member(b).states, single.states, rtol=1e-13, atol=1e-15)


def test_sparse_triad_matches_dense():
    emb = embed_triad(build_complete(4, UniformInterval(-1, 1), 1), 5.0)
    cfg = SimConfig(t_end=5.0, dt=0.01, **RK4)
    a = integrate_sl(emb, cfg, 3)
    b = integrate_sl(emb.to_network(), cfg, 3)
    assert np.allclose(a.states, b.states, rtol=1e-12, atol=1e-14)


# -- feedback -----------------------------------------------------------------


def test_feedback_eps_zero_is_bitwise_plain():
    net = build_complete(5, UniformInterval(-1, 1), 4)
    cfg = SimConfig(t_end=10.0, **RK4)
    a = integrate_sl(net, cfg, 6)
    b = integrate_sl_feedback(net, cfg, FeedbackConfig(0.0), 6)
    assert np.array_equal(a.states, b.states)
    assert np.all(b.pumps == 0)


def test_feedback_fixed_target():
    target = 2.0
    tr = integrate_sl_feedback(pair(1.0), SimConfig(t_end=600.0), FeedbackConfig(0.04, target), 1)
    assert np.allclose(np.abs(tr.final_state), target, rtol=0.01)
    assert tr.pumps.shape == tr.states.shape


def test_feedback_triad_saturates_sooner():
    def t_sat(tr):
        a = tr.amplitudes.max(axis=1)
        return tr.times[np.argmax(a >= 0.9 * a[-1])]

    src = build_complete(5, UniformInterval(-1, 1), 0)
    cfg = SimConfig(t_end=100.0, dt=0.005, record_stride=10, **RK4)
    fb = FeedbackConfig(0.04)
    tc = t_sat(integrate_sl_feedback(src, cfg, fb, 0))
    tt = t_sat(integrate_sl_feedback(embed_triad(src, 20.0), cfg, fb, 0))
    assert tc / tt > 5


# -- Kuramoto -----------------------------------------------------------------


def test_kuramoto_pair_syncs():
    tr = integrate_kuramoto(pair(1.0), SimConfig(t_end=30.0, **RK4), theta0=[0.0, 0.3])
    d = np.angle(tr.final_state[0] * np.conj(tr.final_state[1]))
    assert abs(d) < 1e-8
    assert np.allclose(np.abs(tr.states), 1.0)


def test_kuramoto_splay_is_stationary():
    ring = build_ring(RingSpec(3, 1, 1.0))
    th0 = np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
    tr = integrate_kuramoto(ring, SimConfig(t_end=10.0, **RK4), theta0=th0)
    assert np.allclose(tr.final_state, np.exp(1j * th0), atol=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_kuramoto_energy_descent(seed):
    net = build_complete(8, UniformInterval(-1, 1), seed)
    tr = integrate_kuramoto(net, SimConfig(t_end=20.0, dt=0.01, **RK4), seed)
    e = np.array([xy_energy(net, p) for p in tr.phases])
    assert np.all(np.diff(e) <= 1e-10)


# -- steady state, divergence, recording --------------------------------------


def test_detect_steady_examples():
    const = Trajectory(np.arange(5.0), np.ones((5, 3), complex))
    assert detect_steady(const, 1e-6) == 0
    grow = Trajectory(np.arange(5.0), np.exp(np.arange(5.0))[:, None] * np.ones((1, 2)))
    assert detect_steady(grow, 1e-6) is None
    J = 1.5
    tr = integrate_sl(pair(J), SimConfig(t_end=60.0, **RK4), 3)
    idx = detect_steady(tr, 1e-6)
    assert idx is not None and idx > 0
    assert idx == tr.steady_index
    assert tr.amplitudes[idx - 1].max() < 0.99 * np.sqrt(J) or tr.residuals[idx - 1] >= 1e-6
    assert np.allclose(tr.amplitudes[idx], np.sqrt(J), rtol=0.01)
    # finite-difference fallback on the recorded states agrees
    bare = Trajectory(tr.times, tr.states)
    assert abs(detect_steady(bare, 1e-5) - detect_steady(tr, 1e-5)) < len(tr.times) // 20


def test_rotating_sync_is_steady():
    net = build_complete(3, ConstantFM(1.0)).with_frequencies([0.7, 0.7, 0.7])
    tr = integrate_sl(net, SimConfig(t_end=50.0, **RK4), 0)
    assert tr.reached_steady


def test_divergence_error_carries_time():
    with pytest.raises(DivergenceError) as exc:
        integrate_sl(build_complete(5, ConstantFM(1.0)), SimConfig(dt=5.0, t_end=100.0, **RK4), 0)
    assert exc.value.time > 0
    assert list(exc.value.members) == [0]


def test_stable_dt_is_stable():
    net = build_complete(10, UniformInterval(-1, 1), 0)
    S = np.abs(net.couplings).sum(axis=1).max()
    dt = stable_dt(S, 2.0)
    w = triad_frequencies(10, 1.0, 0)
    integrate_sl(net, SimConfig(dt=dt, t_end=200 * dt, **RK4), 0, frequencies=w)


def test_keep_last_and_stride():
    net = build_complete(4, ConstantFM(1.0))
    full = integrate_sl(net, SimConfig(t_end=2.0, dt=0.01, **RK4), 0)
    assert full.times.size == 201
    last = integrate_sl(net, SimConfig(t_end=2.0, dt=0.01, keep_last=5, **RK4), 0)
    assert np.array_equal(last.states, full.states[-5:])
    strided = integrate_sl(net, SimConfig(t_end=2.0, dt=0.01, record_stride=10, **RK4), 0)
    assert np.allclose(strided.times, full.times[::10])
    adapt = integrate_sl(net, SimConfig(t_end=2.0, dt=0.01, record_stride=10), 0)
    assert np.allclose(adapt.times, np.arange(21) * 0.1)


def test_stop_on_steady_ends_early():
    cfg = SimConfig(t_end=500.0, stop_on_steady=True, **RK4)
    tr = integrate_sl(pair(1.0), cfg, 0)
    assert tr.times[-1] < 500 and tr.reached_steady


def test_trajectory_csv(tmp_path):
    tr = integrate_sl_feedback(pair(1.0), SimConfig(t_end=0.05, dt=0.01, **RK4), FeedbackConfig(0.1), 0)
    p = tmp_path / "traj.csv"
    write_trajectory_csv(tr, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "# format_version 1"
    assert lines[1] == "t,re_psi_0,im_psi_0,re_psi_1,im_psi_1,P_0,P_1"
    assert len(lines) == 2 + tr.times.size
    row = [float(x) for x in lines[-1].split(",")]
    assert row[1] == tr.final_state[0].real
