"""Estimator tests, including the generic normal-equations oracle."""

import numpy as np
import pytest

from bstoa.channel import (
    ObservationBlock,
    random_scene,
    stream_rng,
    synth_observations,
    true_delays,
)
from bstoa.errors import ConstraintViolated, DimensionMismatch
from bstoa.estimator import (
    decompose_delays,
    full_estimate,
    ls_estimate,
    refine_bistatic,
    refine_monostatic,
)
from bstoa.topology import (
    Topology,
    correlation_matrix,
    unvec,
    vec,
    weighting_matrix,
)


def _b(topo):
    return weighting_matrix(correlation_matrix(topo))


def test_ls_estimate_is_pilot_mean():
    obs = ObservationBlock(y=np.array([[1.0], [3.0]]), pilot_len=2)
    assert ls_estimate(obs, Topology.bistatic(1, 1))[0, 0] == 2.0


def test_ls_estimate_noiseless_recovers_truth():
    topo = Topology.bistatic(3, 2)
    t = true_delays(random_scene(topo, 10.0, stream_rng(3, 0)))
    # Power-of-two pilot counts average identical values without rounding.
    obs = synth_observations(t, 4, 0.0, stream_rng(3, 1))
    assert np.array_equal(ls_estimate(obs, topo), t)
    obs = synth_observations(t, 5, 0.0, stream_rng(3, 1))
    assert np.abs(ls_estimate(obs, topo) - t).max() <= np.spacing(t).max()


def test_ls_estimate_matches_normal_equations_oracle():
    """Block means equal (S^T S)^-1 S^T y for S = I \otimes ones(L, 1)."""
    topo = Topology.bistatic(2, 2)
    length = 4
    rng = stream_rng(17, 0)
    t = true_delays(random_scene(topo, 10.0, rng))
    obs = synth_observations(t, length, 1e-9, rng)
    s = np.kron(np.eye(topo.mn), np.ones((length, 1)))
    y_vec = vec(obs.y)
    oracle = np.linalg.solve(s.T @ s, s.T @ y_vec)
    assert np.abs(vec(ls_estimate(obs, topo)) - oracle).max() < 1e-12 * np.abs(oracle).max()


def test_ls_estimate_dimension_mismatch():
    obs = ObservationBlock(y=np.zeros((4, 2)), pilot_len=2)
    with pytest.raises(DimensionMismatch):
        ls_estimate(obs, Topology.bistatic(3, 2))


def test_refine_matches_kkt_oracle():
    """Projection of the pilot means equals the solution of the full
    constrained normal equations, solved via the bordered KKT system
    [[S^T S, A^T], [A, 0]] on the raw observations."""
    topo = Topology.bistatic(3, 2)
    length = 4
    rng = stream_rng(25, 0)
    t = true_delays(random_scene(topo, 10.0, rng))
    obs = synth_observations(t, length, 2e-9, rng)
    a = correlation_matrix(topo).astype(float)
    s = np.kron(np.eye(topo.mn), np.ones((length, 1)))
    y_vec = vec(obs.y)
    k = a.shape[0]
    kkt = np.block([[s.T @ s, a.T], [a, np.zeros((k, k))]])
    rhs = np.concatenate([s.T @ y_vec, np.zeros(k)])
    oracle = np.linalg.solve(kkt, rhs)[: topo.mn]
    refined = refine_bistatic(ls_estimate(obs, topo), _b(topo))
    assert np.abs(vec(refined) - oracle).max() < 1e-12 * np.abs(oracle).max()


def test_refine_bistatic_unit_vector():
    # First column of the 2x2 projector, frozen from the pattern.
    topo = Topology.bistatic(2, 2)
    t_hat = unvec(np.array([1.0, 0.0, 0.0, 0.0]), 2, 2)
    refined = refine_bistatic(t_hat, _b(topo))
    assert np.abs(vec(refined) - np.array([0.75, 0.25, 0.25, -0.25])).max() < 1e-14


def test_refine_bistatic_fixes_constraint_satisfying_input():
    topo = Topology.bistatic(4, 3)
    t = true_delays(random_scene(topo, 10.0, stream_rng(21, 0)))
    refined = refine_bistatic(t, _b(topo))
    assert np.abs(refined - t).max() < 1e-12 * np.abs(t).max()


def test_refine_bistatic_idempotent():
    topo = Topology.bistatic(3, 3)
    b = _b(topo)
    rng = stream_rng(21, 1)
    noisy = rng.normal(size=(3, 3))
    once = refine_bistatic(noisy, b)
    twice = refine_bistatic(once, b)
    assert np.abs(twice - once).max() < 1e-12


def test_refine_bistatic_result_satisfies_constraint():
    topo = Topology.bistatic(4, 3)
    a = correlation_matrix(topo).astype(float)
    noisy = stream_rng(21, 2).normal(size=(4, 3))
    refined = refine_bistatic(noisy, _b(topo))
    assert np.abs(a @ vec(refined)).max() < 1e-9 * max(1.0, np.abs(refined).max())


def test_refine_monostatic_hand_example():
    topo = Topology.monostatic(2)
    t_hat = unvec(np.array([1.0, 0.0, 0.0, 0.0]), 2, 2)
    refined = refine_monostatic(t_hat, _b(topo))
    # Projection gives [[3/4, 1/4], [1/4, -1/4]]; already symmetric.
    assert np.abs(refined - np.array([[0.75, 0.25], [0.25, -0.25]])).max() < 1e-14


def test_refine_monostatic_symmetric_and_constrained():
    topo = Topology.monostatic(4)
    a = correlation_matrix(topo).astype(float)
    noisy = stream_rng(21, 3).normal(size=(4, 4))
    refined = refine_monostatic(noisy, _b(topo))
    assert np.array_equal(refined, refined.T)
    assert np.abs(a @ vec(refined)).max() < 1e-9 * max(1.0, np.abs(refined).max())


def test_refine_monostatic_fixed_point():
    topo = Topology.monostatic(3)
    t = true_delays(random_scene(topo, 10.0, stream_rng(21, 4)))
    refined = refine_monostatic(t, _b(topo))
    assert np.abs(refined - t).max() < 1e-12 * np.abs(t).max()


def test_refine_dimension_checks():
    topo = Topology.bistatic(2, 2)
    with pytest.raises(DimensionMismatch):
        refine_bistatic(np.zeros((2, 3)), _b(topo))
    with pytest.raises(DimensionMismatch):
        refine_monostatic(np.zeros((2, 3)), _b(topo))


def test_full_estimate_report():
    topo = Topology.bistatic(2, 2)
    t = true_delays(random_scene(topo, 10.0, stream_rng(50, 0)))
    obs = synth_observations(t, 4, 1e-9, stream_rng(50, 1))
    report = full_estimate(obs, topo)
    assert report.t_hat.shape == (2, 2)
    assert report.constraint_residual < 1e-9 * max(1.0, np.abs(report.t_tilde).max())


def test_full_estimate_monostatic_symmetry():
    topo = Topology.monostatic(3)
    t = true_delays(random_scene(topo, 10.0, stream_rng(51, 0)))
    obs = synth_observations(t, 2, 1e-9, stream_rng(51, 1))
    report = full_estimate(obs, topo)
    assert np.array_equal(report.t_tilde, report.t_tilde.T)
    assert report.constraint_residual < 1e-9 * max(1.0, np.abs(report.t_tilde).max())


def test_zero_noise_pipeline_exact():
    """scene -> delays -> pilots -> LS -> refinement reproduces the truth."""
    for topo in (Topology.bistatic(4, 3), Topology.monostatic(5)):
        t = true_delays(random_scene(topo, 10.0, stream_rng(60, topo.m)))
        obs = synth_observations(t, 8, 0.0, stream_rng(60, 10 + topo.m))
        report = full_estimate(obs, topo)
        assert np.abs(report.t_tilde - t).max() < 1e-12 * np.abs(t).max()


def test_unbiasedness_monte_carlo():
    """Mean refinement error stays inside 5 sigma0 / sqrt(trials) per entry."""
    topo = Topology.bistatic(2, 2)
    b = _b(topo)
    length, sigma, trials = 2, 1e-9, 100_000
    t = true_delays(random_scene(topo, 10.0, stream_rng(70, 0)))
    noise = stream_rng(70, 1).normal(0.0, sigma, size=(trials, length * 2, 2))
    t_hats = t + noise.reshape(trials, 2, length, 2).mean(axis=2)
    # Column-major flattening per trial, then one projector application each.
    flat_errors = (t_hats - t).transpose(0, 2, 1).reshape(trials, 4)
    refined_errors = np.einsum("zr,tr->tz", b, flat_errors)
    sigma0 = sigma / np.sqrt(length)
    bound = 5.0 * sigma0 / np.sqrt(trials)
    assert np.abs(refined_errors.mean(axis=0)).max() < bound


def test_decompose_recovers_known_components():
    rng = stream_rng(80, 0)
    m, n = 4, 3
    h = rng.uniform(0.0, 1e-7, m)
    g = rng.uniform(0.0, 1e-7, n)
    delta = 2e-8
    t = delta + h[:, None] + g[None, :]
    h_got, g_got = decompose_delays(t, delta, gauge_g1=g[0])
    assert np.abs(h_got - h).max() < 1e-22
    assert np.abs(g_got - g).max() < 1e-22


def test_decompose_gauge_freedom():
    """Different gauges shift h and g oppositely; the sums are invariant."""
    topo = Topology.bistatic(3, 3)
    t = true_delays(random_scene(topo, 10.0, stream_rng(80, 1)))
    h1, g1 = decompose_delays(t, 0.0, gauge_g1=0.0)
    h2, g2 = decompose_delays(t, 0.0, gauge_g1=5e-9)
    sums1 = h1[:, None] + g1[None, :]
    sums2 = h2[:, None] + g2[None, :]
    assert np.abs(sums1 - sums2).max() < 1e-12 * np.abs(t).max()


def test_decompose_rebuild_round_trip():
    topo = Topology.bistatic(5, 4)
    for index in range(10):
        t = true_delays(random_scene(topo, 10.0, stream_rng(80, 2 + index)))
        delta = 1e-8
        t = t + delta
        h, g = decompose_delays(t, delta, gauge_g1=3e-9)
        rebuilt = delta + h[:, None] + g[None, :]
        assert np.abs(rebuilt - t).max() < 1e-12 * max(1.0, np.abs(t).max())


def test_decompose_monostatic_gauge_gives_equal_vectors():
    topo = Topology.monostatic(4)
    t = true_delays(random_scene(topo, 10.0, stream_rng(80, 20)))
    h, g = decompose_delays(t, 0.0, gauge_g1=t[0, 0] / 2.0)
    assert np.abs(h - g).max() < 1e-24
    assert h[0] == pytest.approx(t[0, 0] / 2.0, abs=0.0)
    # With this gauge each one-way delay is half its round-trip diagonal.
    assert np.abs(h - np.diag(t) / 2.0).max() < 1e-23


def test_decompose_monostatic_single_antenna():
    t = np.array([[4.0e-8]])
    h, g = decompose_delays(t, 0.0, gauge_g1=2.0e-8)
    assert h[0] == pytest.approx(2.0e-8)
    assert g[0] == pytest.approx(2.0e-8)


def test_decompose_rejects_unconstrained_input():
    noisy = stream_rng(80, 30).normal(size=(3, 3))
    with pytest.raises(ConstraintViolated):
        decompose_delays(noisy, 0.0, gauge_g1=0.0)
