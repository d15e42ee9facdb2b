import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thbt.channel import (
    ArrayConfig, PathParams, Scenario, Sounder, assemble_channel, sample_paths,
    steering_surrogate, to_surrogate,
)
from thbt.exceptions import CoverageViolation, EmptyGrid, SingularSystem, ZeroCurvature
from thbt.refine1 import Refine1Config, build_codebook1, extend_region, region_update1, train_stage1
from thbt.refine2 import (
    PhaseSeries, Refine2Config, SearchGrid, build_codebook2, choose_k2, coverage_slack,
    estimate_ml, estimate_psp, ml_grid, ml_objective, psp_model_phase, quadratic_fit,
    train_stage2, unwrap_margin, unwrap_phases, unwrap_series,
)

from .conftest import DE2_B, DE2_OMEGA

K2_DE2 = -2.4749727e-4  # frozen from the reference-case parameters


def de2_pipeline(cfg, r1, r2, channel=None):
    h = assemble_channel(cfg, [PathParams(1.0, DE2_OMEGA, 0.005 * (1 - DE2_OMEGA**2) / (4 * DE2_B))]) \
        if channel is None else channel
    s = Sounder(cfg, h)
    m_bar, _ = train_stage1(s, build_codebook1(cfg, r1))
    region = extend_region(cfg, region_update1(cfg, m_bar, r1))
    cb = build_codebook2(cfg, m_bar, r1, r2, region)
    return s, m_bar, region, cb, train_stage2(s, cb)


def test_choose_k2_reference_case(cfg, r1, r2):
    assert r2.resolve_theta_bar2(cfg) == pytest.approx(2 / 513)
    assert unwrap_margin(cfg, r1, r2) == pytest.approx(2.475e-4, rel=1e-3)
    other = r1.k_bar1(0) - 8 * (2 / 513) / 513 - 1 / 513**2
    assert other == pytest.approx(-1.255e-4, rel=1e-3)
    assert choose_k2(cfg, r1, r2, 0) == pytest.approx(K2_DE2, rel=1e-6)


def test_choose_k2_odd_branch(cfg, r1, r2):
    k2 = choose_k2(cfg, r1, r2, 1)
    assert k2 >= r1.b_bar + unwrap_margin(cfg, r1, r2)
    assert k2 >= r1.k_bar1(1) + 8 * (2 / 513) / 513 + 1 / 513**2


@pytest.mark.parametrize("m_bar", [-7, -2, -1, 0, 3, 7])
def test_k2_satisfies_coverage_and_unwrap_margin(cfg, r1, r2, m_bar):
    cb = build_codebook2(cfg, m_bar, r1, r2)
    region = extend_region(cfg, region_update1(cfg, m_bar, r1))
    bs = np.linspace(0, r1.b_bar, 513)
    assert coverage_slack(cfg, region, cb, bs).min() >= 0
    big_b = unwrap_margin(cfg, r1, r2)
    assert np.all(np.abs(bs - cb.k2) >= big_b - 1e-18)


def test_codebook2_shape_and_translation(cfg, r1, r2):
    cb = build_codebook2(cfg, 2, r1, r2)
    assert len(cb) == 17
    assert np.allclose(np.diff(cb.theta), 2 / 513)
    assert cb.theta[8] == pytest.approx(2 * r1.theta_bar1(cfg))
    v = cb.vectors(cfg)
    # coverage of w_{m+1} is w_m's translated by theta_bar2
    assert np.allclose(v[1], v[0] * np.exp(1j * np.pi * (2 / 513) * cfg.indices))


def test_region_inside_every_coverage_on_grid(cfg, r1, r2):
    cb = build_codebook2(cfg, 0, r1, r2)
    region = extend_region(cfg, region_update1(cfg, 0, r1))
    (lo, hi), _ = region.bounding_box()
    oo, bb = np.meshgrid(np.linspace(lo, hi, 200), np.linspace(0, r1.b_bar, 200), indexing="ij")
    inside = region.contains(oo, bb)
    for t in cb.theta:
        assert np.all(np.abs(oo[inside] - t) <= cfg.n_t * np.abs(bb[inside] - cb.k2))


def test_coverage_violation_raised(cfg, r1):
    region = extend_region(cfg, region_update1(cfg, 0, r1))
    wide = dataclasses.replace(region, widening=3e-4)
    with pytest.raises(CoverageViolation):
        build_codebook2(cfg, 0, r1, Refine2Config(m2=8), wide)


def test_train_stage2_counter(cfg, r1, r2):
    s, _, _, cb, y = de2_pipeline(cfg, r1, r2)
    assert len(y) == 17 and s.count == 15 + 17


def test_reference_case_stage1_winner(cfg, r1, r2):
    _, m_bar, region, cb, _ = de2_pipeline(cfg, r1, r2)
    assert m_bar == 0 and cb.k2 == pytest.approx(K2_DE2, rel=1e-6)
    assert region.contains(DE2_OMEGA, DE2_B)


def test_ml_grid_inside_region(cfg, r1):
    region = extend_region(cfg, region_update1(cfg, 3, r1))
    g = ml_grid(region)
    assert len(g) == 6801  # frozen for the default 101 x 101 grid
    rel = np.abs(np.asarray(g.rel_omega))
    assert np.all(rel <= region.half_width(np.asarray(g.b)) + 1e-12)


def test_ml_exact_on_grid_node(cfg, r1, r2):
    region = extend_region(cfg, region_update1(cfg, 0, r1))
    g = ml_grid(region)
    i = len(g) // 3
    omega, b = g.omega[i], g.b[i]
    _, _, _, cb, y = de2_pipeline(cfg, r1, r2, channel=steering_surrogate(cfg, omega, b))
    assert estimate_ml(cfg, y, cb, g) == (pytest.approx(omega, abs=1e-15), pytest.approx(b, abs=1e-18))


def test_ml_reference_case_within_one_cell(cfg, r1, r2):
    _, _, region, cb, y = de2_pipeline(cfg, r1, r2)
    g = ml_grid(region)
    om, b = estimate_ml(cfg, y, cb, g)
    w = max(region.half_width(0.0), region.half_width(r1.b_bar))
    assert abs(om - DE2_OMEGA) <= 2 * w / 100
    assert abs(b - DE2_B) <= r1.b_bar / 100
    assert region.contains(om, b)


@given(st.floats(0.01, 100.0))
def test_ml_scale_invariance(c):
    cfg = ArrayConfig()
    r1, r2 = Refine1Config(), Refine2Config()
    region = extend_region(cfg, region_update1(cfg, 0, r1))
    cb = build_codebook2(cfg, 0, r1, r2, region)
    y = Sounder(cfg, steering_surrogate(cfg, 0.03, 3e-5)).probe(cb.theta, cb.k2)
    g = ml_grid(region, 41, 41)
    assert estimate_ml(cfg, c * y, cb, g) == estimate_ml(cfg, y, cb, g)


def test_ml_empty_grid(cfg, r1, r2):
    cb = build_codebook2(cfg, 0, r1, r2)
    with pytest.raises(EmptyGrid):
        ml_objective(cfg, np.ones(17), cb, SearchGrid(0.0, (), (), (0, 0)))


def test_unwrap_examples():
    assert np.allclose(unwrap_series([3.0, -3.0], anchor=3.0), [3.0, 3.2832], atol=1e-4)
    assert np.allclose(unwrap_series([3.0, -3.0]), [0.0, 0.2832], atol=1e-4)
    assert np.allclose(unwrap_series([0.7] * 5, anchor=0.7), [0.7] * 5)


@given(st.lists(st.floats(-np.pi, np.pi), min_size=2, max_size=30))
def test_unwrap_steps_bounded_and_consistent(ph):
    u = unwrap_series(ph)
    d = np.diff(u)
    assert np.all((d >= -np.pi - 1e-12) & (d < np.pi + 1e-12))
    # unwrapping never changes the phase modulo 2 pi
    k = (u - (np.asarray(ph) - ph[0])) / (2 * np.pi)
    assert np.allclose(k, np.round(k), atol=1e-9)


def test_unwrap_phases_conjugates(cfg):
    y = np.exp(-1j * np.array([0.1, 0.2, 0.4]))
    s = unwrap_phases(y)
    assert isinstance(s, PhaseSeries)
    assert np.allclose(s.wrapped, [0.1, 0.2, 0.4]) and np.allclose(s.unwrapped, [0, 0.1, 0.3])


def test_reference_case_phase_series_smooth(cfg, r1, r2):
    *_, y = de2_pipeline(cfg, r1, r2)
    u = unwrap_phases(y).unwrapped
    assert np.abs(np.diff(u, 2)).max() < np.pi / 2


def test_unwrap_safety_random_paths(cfg, r1, r2):
    rng = np.random.default_rng(3)
    cb1 = build_codebook1(cfg, r1)
    for _ in range(100):
        p = sample_paths(cfg, rng, Scenario(gain_std=(1.0,)))
        s = Sounder(cfg, assemble_channel(cfg, p))
        m_bar, _ = train_stage1(s, cb1)
        cb = build_codebook2(cfg, m_bar, r1, r2)
        y = train_stage2(s, cb)
        # the true (continuous) phase steps must stay below pi for the unwrap to be exact
        true_steps = np.diff(np.unwrap(np.angle(np.conj(y))))
        assert np.abs(true_steps).max() <= np.pi


def test_quadratic_fit_exact_and_singular():
    t = np.linspace(-0.1, 0.3, 9)
    u = -(2.0 * t**2 - 0.5 * t + 0.25)
    assert np.allclose(quadratic_fit(t, u), (2.0, -0.5, 0.25))
    with pytest.raises(SingularSystem):
        quadratic_fit([0.1, 0.1, 0.2], [1, 2, 3])
    with pytest.raises(SingularSystem):
        quadratic_fit(np.full(5, 0.1), np.arange(5.0))


def test_psp_recovers_model_phases():
    thetas = np.arange(-8, 9) * 2 / 513
    u = psp_model_phase(thetas, DE2_OMEGA, DE2_B, K2_DE2, phi=1.3)
    om, b = estimate_psp(u, thetas, K2_DE2)
    assert om == pytest.approx(DE2_OMEGA, abs=1e-9) and b == pytest.approx(DE2_B, abs=1e-9)


def test_psp_zero_curvature():
    with pytest.raises(ZeroCurvature):
        estimate_psp(np.linspace(0, 1, 5), np.linspace(0, 1, 5), 0.0)


def test_psp_reference_case_noiseless(cfg, r1, r2):
    *_, cb, y = de2_pipeline(cfg, r1, r2)
    om, b = estimate_psp(unwrap_phases(y), cb.theta, cb.k2)
    assert abs(om - DE2_OMEGA) <= 1e-3
    # frozen: 2.7e-6, the stationary-phase bias of the exact gain
    assert abs(b - DE2_B) <= 3e-6


def _residual(u, thetas, om, b, k2):
    r = u - psp_model_phase(thetas, om, b, k2)
    r = r - r.mean(axis=-1, keepdims=True)
    return (r**2).sum(-1)


def test_psp_residual_not_beaten_by_grid(cfg, r1, r2):
    *_, cb, y = de2_pipeline(cfg, r1, r2)
    u = unwrap_phases(y).unwrapped
    om, b = estimate_psp(u, cb.theta, cb.k2)
    best = _residual(u, cb.theta, om, b, cb.k2)
    oo, bb = np.meshgrid(np.linspace(om - 0.01, om + 0.01, 121), np.linspace(0, 1.22e-4, 121))
    grid = _residual(u, cb.theta, oo[..., None], bb[..., None], cb.k2)
    assert best <= grid.min() + 1e-12
