import math

import numpy as np
import pytest

from vvlc.channel_models import (
    BLACK_CAR,
    ORANGE_CAR,
    SURFACE_PRESETS,
    WHITE_CAR,
    LambertianScene,
    PathLossModel,
    SurfaceParams,
    WdgfParams,
    channel_gain_amplitude,
    concentrator_gain,
    db_to_amplitude,
    lambertian_gain,
    lambertian_gain_total,
    path_loss_db,
    wdgf_eval,
    wdgf_fwhm,
)

TABLE_COEFFS = {
    "white": (0.9185, 4.703, 0.7189, 0.0774),
    "orange": (0.7871, 5.477, 0.9998, 0.0243),
    "black": (0.7516, 5.384, 0.9238, 0.0156),
}

# Frozen oracle: 50-digit mpmath evaluation of
# 10*log10((0.9185*exp(-0.7189*2/4))**(4-2) * (4/2)**4.703), pl_ref = 0.
PL_WHITE_D4_ORACLE = 10.29688087851110073232891


def oracle_path_loss(alpha, beta, n, d0, d, pl_ref):
    """Independent high-precision evaluation of the path-loss expression."""
    import mpmath as mp

    mp.mp.dps = 50
    a, b, nn, dd0, dd = (mp.mpf(repr(v)) for v in (alpha, beta, n, d0, d))
    pl = 10 * mp.log10((a * mp.e ** (-nn * dd0 / dd)) ** (dd - dd0) * (dd / dd0) ** b)
    return float(pl) + pl_ref


def test_table_presets_match_published_coefficients():
    for label, (alpha, beta, n, rho) in TABLE_COEFFS.items():
        s = SURFACE_PRESETS[label]
        assert (s.alpha, s.beta, s.n, s.rho) == (alpha, beta, n, rho)


def test_path_loss_at_reference_distance_is_pl_ref():
    for surface in (WHITE_CAR, ORANGE_CAR, BLACK_CAR):
        model = PathLossModel(surface, 2.0, 60.0)
        assert path_loss_db(model, 2.0) == 60.0


def test_path_loss_matches_high_precision_oracle():
    model = PathLossModel(WHITE_CAR, 2.0, 0.0)
    got = path_loss_db(model, 4.0)
    assert got == pytest.approx(PL_WHITE_D4_ORACLE, rel=1e-12)
    assert got == pytest.approx(oracle_path_loss(0.9185, 4.703, 0.7189, 2.0, 4.0, 0.0), rel=1e-12)


def test_path_loss_strictly_increasing_over_validity_range():
    # The white and orange coefficient sets are strictly increasing over the
    # full measured range; the black set has a genuine stationary point near
    # 18.1 m (the (d-d0)*log(base) term overtakes the beta term), so its
    # monotone range ends there.
    d = np.arange(2.0, 20.0 + 0.005, 0.01)
    for surface in (WHITE_CAR, ORANGE_CAR):
        pl = path_loss_db(PathLossModel(surface, 2.0, 0.0), d)
        assert np.all(np.diff(pl) > 0)
    d_black = np.arange(2.0, 18.0 + 0.005, 0.01)
    pl_black = path_loss_db(PathLossModel(BLACK_CAR, 2.0, 0.0), d_black)
    assert np.all(np.diff(pl_black) > 0)
    full_black = path_loss_db(PathLossModel(BLACK_CAR, 2.0, 0.0), d)
    assert np.min(np.diff(full_black)) < 0  # rollover is real, keep it visible


def test_path_loss_rejects_distances_inside_reference():
    model = PathLossModel(WHITE_CAR, 2.0, 0.0)
    with pytest.raises(ValueError):
        path_loss_db(model, 1.5)
    with pytest.raises(ValueError):
        PathLossModel(WHITE_CAR, 0.0, 0.0)


def test_path_loss_warns_when_decay_base_exceeds_one():
    shiny = SurfaceParams("mirror-ish", 1.5, 4.0, 0.1, 0.5)
    model = PathLossModel(shiny, 2.0, 0.0)
    with pytest.warns(UserWarning):
        path_loss_db(model, 15.0)


def test_db_amplitude_trivials_and_round_trip():
    assert db_to_amplitude(0.0) == 1.0
    assert db_to_amplitude(20.0) == pytest.approx(0.1, rel=1e-15)
    assert db_to_amplitude(60.0) == pytest.approx(1e-3, rel=1e-15)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-80, 80, 50):
        assert db_to_amplitude(x) * db_to_amplitude(-x) == pytest.approx(1.0, abs=1e-12)


def test_channel_gain_amplitude_uses_div20_rule():
    model = PathLossModel(WHITE_CAR, 2.0, 60.0)
    assert channel_gain_amplitude(model, 2.0) == pytest.approx(1e-3, rel=1e-12)


def test_wdgf_zero_at_origin_for_positive_exponents():
    p = WdgfParams(1.0, 1e6, 0.5, 2e6, 0.3, 0.7)
    assert wdgf_eval(p, 0.0) == 0.0


def test_wdgf_rejects_negative_time():
    p = WdgfParams(1.0, 1e6, 0.0, 2e6, 0.0, 0.0)
    with pytest.raises(ValueError):
        wdgf_eval(p, -1e-9)


def test_wdgf_single_term_peak_at_alpha_over_c2():
    p = WdgfParams(c1=2.0, c2=1e9, c3=0.0, c4=1e9, alpha_w=1.5, beta_w=0.0)
    t_peak = p.alpha_w / p.c2
    grid = np.linspace(0, 10 * t_peak, 20001)
    vals = wdgf_eval(p, grid)
    assert grid[int(np.argmax(vals))] == pytest.approx(t_peak, rel=1e-3)


def test_wdgf_matches_term_by_term_oracle():
    p = WdgfParams(0.8, 1.3e6, 0.4, 4.1e6, 0.21, 0.05)
    grid = np.arange(0.0, 2e-6, 1e-9)
    got = wdgf_eval(p, grid)
    expected = np.array(
        [
            p.c1 * t**p.alpha_w * math.exp(-p.c2 * t)
            + p.c3 * t**p.beta_w * math.exp(-p.c4 * t)
            for t in grid
        ]
    )
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_wdgf_nonnegative_for_nonnegative_weights():
    rng = np.random.default_rng(1)
    grid = np.arange(0.0, 5e-6, 5e-9)
    for _ in range(25):
        p = WdgfParams(
            c1=rng.uniform(0, 5),
            c2=rng.uniform(1e5, 1e8),
            c3=rng.uniform(0, 5),
            c4=rng.uniform(1e5, 1e8),
            alpha_w=rng.uniform(0, 2),
            beta_w=rng.uniform(0, 2),
        )
        assert np.all(wdgf_eval(p, grid) >= 0)


# Frozen oracle: roots of t*exp(-t) = exp(-1)/2 via the Lambert W function,
# width = -W_{-1}(-1/(2e)) + W_0(-1/(2e)) = 2.446386037030126.
SINGLE_GAMMA_FWHM_TAUS = 2.446386037030126


def test_wdgf_fwhm_single_gamma_against_lambertw_oracle():
    from scipy.special import lambertw

    c = -0.5 * math.exp(-1.0)
    width = float(-lambertw(c, -1).real + lambertw(c, 0).real)
    assert width == pytest.approx(SINGLE_GAMMA_FWHM_TAUS, rel=1e-12)

    tau = 1e-9
    p = WdgfParams(c1=1.0, c2=1.0 / tau, c3=0.0, c4=1.0 / tau, alpha_w=1.0, beta_w=0.0)
    got = wdgf_fwhm(p, t_res=1e-13, t_max=50e-9)
    assert got == pytest.approx(SINGLE_GAMMA_FWHM_TAUS * tau, rel=1e-4)


def test_wdgf_fwhm_scales_with_time_axis():
    p = WdgfParams(1.0, 2e6, 0.5, 6e6, 0.4, 0.1)
    # h(t/2): halve the rates and rescale each amplitude by 2**-exponent
    p2 = WdgfParams(1.0 * 2**-p.alpha_w, 1e6, 0.5 * 2**-p.beta_w, 3e6, 0.4, 0.1)
    w1 = wdgf_fwhm(p, t_res=0.2e-9)
    w2 = wdgf_fwhm(p2, t_res=0.2e-9)
    assert w2 == pytest.approx(2 * w1, rel=1e-3)


def test_wdgf_fwhm_grid_refinement_consistency():
    p = WdgfParams(1.0, 1.5e6, 0.3, 5e6, 0.2, 0.05)
    w_coarse = wdgf_fwhm(p, t_res=1e-9)
    w_fine = wdgf_fwhm(p, t_res=0.1e-9)
    assert abs(w_coarse - w_fine) < 1e-9


def test_wdgf_fwhm_errors_when_curve_never_falls():
    p = WdgfParams(1.0, 1e3, 0.0, 1e3, 0.0, 0.0)  # ~1 ms decay
    with pytest.raises(ValueError):
        wdgf_fwhm(p, t_res=1e-9, t_max=1e-6)


def _scene(**overrides):
    base = dict(
        m=1.0,
        a_r=1e-4,
        da_r=0.05,
        rho=0.5,
        phi=0.2,
        alpha_ang=0.3,
        beta_ang=0.25,
        psi=0.1,
        psi_c=math.pi / 4,
        t_s=0.9,
        n_refr=1.5,
    )
    base.update(overrides)
    return LambertianScene(**base)


def test_lambertian_inverse_square_in_both_distances():
    scene = _scene()
    g = lambertian_gain(scene, 3.0, 8.0)
    assert lambertian_gain(scene, 3.0, 4.0) == pytest.approx(4 * g, rel=1e-12)
    assert lambertian_gain(scene, 1.5, 8.0) == pytest.approx(4 * g, rel=1e-12)


def test_lambertian_all_angles_zero_closed_form():
    scene = _scene(m=1.0, phi=0.0, alpha_ang=0.0, beta_ang=0.0, psi=0.0,
                   psi_c=math.pi / 2, t_s=1.0, n_refr=1.0)
    d1, d2 = 2.0, 5.0
    expected = 2 * scene.a_r * scene.rho * scene.da_r / (2 * math.pi**2 * d1**2 * d2**2)
    assert lambertian_gain(scene, d1, d2) == pytest.approx(expected, rel=1e-12)


def test_lambertian_matches_independent_scripted_evaluation():
    scene = _scene()
    d1, d2 = 2.5, 7.0
    g = scene.n_refr**2 / math.sin(scene.psi_c) ** 2
    expected = (
        (scene.m + 1)
        * scene.a_r
        / (2 * math.pi**2 * d1**2 * d2**2)
        * scene.rho
        * scene.da_r
        * math.cos(scene.phi) ** scene.m
        * math.cos(scene.alpha_ang)
        * math.cos(scene.beta_ang)
        * scene.t_s
        * g
        * math.cos(scene.psi)
    )
    assert lambertian_gain(scene, d1, d2) == pytest.approx(expected, rel=1e-12)


def test_lambertian_linear_in_rho_and_patch_area():
    d1, d2 = 2.0, 6.0
    g = lambertian_gain(_scene(rho=0.25, da_r=0.02), d1, d2)
    assert lambertian_gain(_scene(rho=0.5, da_r=0.02), d1, d2) == pytest.approx(2 * g, rel=1e-12)
    assert lambertian_gain(_scene(rho=0.25, da_r=0.04), d1, d2) == pytest.approx(2 * g, rel=1e-12)


def test_lambertian_fov_gating_and_distance_validation():
    assert lambertian_gain(_scene(psi=0.9, psi_c=0.5), 2.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        lambertian_gain(_scene(), 0.0, 2.0)
    with pytest.raises(ValueError):
        lambertian_gain(_scene(), 2.0, -1.0)


def test_lambertian_total_sums_patches():
    patches = [(_scene(), 2.0, 5.0), (_scene(rho=0.3), 2.0, 6.0)]
    expected = sum(lambertian_gain(s, a, b) for s, a, b in patches)
    assert lambertian_gain_total(patches) == pytest.approx(expected, rel=1e-15)


def test_concentrator_gain_cases():
    assert concentrator_gain(1.0, math.pi / 2, 0.0) == pytest.approx(1.0, rel=1e-15)
    assert concentrator_gain(1.5, math.pi / 6, 0.3) == pytest.approx(9.0, rel=1e-12)
    assert concentrator_gain(1.5, math.pi / 6, 0.6) == 0.0
    with pytest.raises(ValueError):
        concentrator_gain(1.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        concentrator_gain(1.5, 2.0, 0.1)


def test_surface_params_validation():
    with pytest.raises(ValueError):
        SurfaceParams("bad", -1.0, 4.0, 0.7, 0.1)
    with pytest.raises(ValueError):
        SurfaceParams("bad", 0.9, 4.0, 0.7, 1.5)
    # fitted coefficient sets may omit rho
    assert SurfaceParams("fit", 0.9, 4.0, 0.7).rho is None
