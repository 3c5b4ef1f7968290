import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noddikit.amico import (
    AmicoError,
    Microstructure,
    TensorFit,
    amico_batch,
    amico_estimate,
    dti_fit,
    params_from_fractions,
    write_amico_csv,
)
from noddikit.dictionary import build_dictionary, default_grid
from noddikit.signal import TissueParams, aiso_signal, od_from_kappa, synthesize
from noddikit.solvers import MixtureFractions

E_Z = np.array([0.0, 0.0, 1.0])


def gaussian_tensor_signal(scheme, mu, d_par=1.7e-3, d_perp=3e-4):
    mu = mu / np.linalg.norm(mu)
    tensor = d_perp * np.eye(3) + (d_par - d_perp) * np.outer(mu, mu)
    quad_form = np.einsum("ki,ij,kj->k", scheme.directions, tensor,
                          scheme.directions)
    return np.exp(-scheme.bvalues * quad_form), tensor


# ---------------------------------------------------------------------------
# dti_fit


def test_dti_fit_recovers_axial_direction(scheme):
    y, _ = gaussian_tensor_signal(scheme, E_Z)
    fit = dti_fit(scheme, y)
    assert abs(fit.principal_direction @ E_Z) > 0.999
    assert not fit.isotropic


def test_dti_fit_recovers_rotated_directions(scheme, rng):
    for _ in range(5):
        mu = rng.normal(size=3)
        mu /= np.linalg.norm(mu)
        y, _ = gaussian_tensor_signal(scheme, mu)
        fit = dti_fit(scheme, y)
        assert abs(fit.principal_direction @ mu) > 0.999


def test_dti_fit_isotropic_signal(scheme):
    d = 3.0e-3
    y = np.exp(-scheme.bvalues * d)
    fit = dti_fit(scheme, y)
    assert np.max(np.abs(fit.tensor - d * np.eye(3))) < 1e-8
    assert fit.isotropic
    assert np.array_equal(fit.principal_direction, E_Z)


def test_dti_fit_sign_normalized_z(scheme, rng):
    for _ in range(10):
        mu = rng.normal(size=3)
        mu /= np.linalg.norm(mu)
        y, _ = gaussian_tensor_signal(scheme, mu)
        pd = dti_fit(scheme, y).principal_direction
        assert pd[2] > -1e-12


def test_dti_fit_clamps_nonpositive_entries(scheme):
    y, _ = gaussian_tensor_signal(scheme, E_Z)
    y_bad = y.copy()
    y_bad[5] = -0.25
    y_ref = y.copy()
    y_ref[5] = 1e-6
    bad = dti_fit(scheme, y_bad)
    ref = dti_fit(scheme, y_ref)
    assert np.array_equal(bad.tensor, ref.tensor)
    assert bad.residual == ref.residual


def test_dti_fit_ignores_higher_shells(scheme):
    y, _ = gaussian_tensor_signal(scheme, np.array([0.2, -0.5, 0.84]))
    high = scheme.bvalues > 1500
    a, b = y.copy(), y.copy()
    a[high] = 0.5
    b[high] = 0.9
    fa, fb = dti_fit(scheme, a), dti_fit(scheme, b)
    assert np.array_equal(fa.tensor, fb.tensor)
    assert fa.residual == fb.residual


def test_dti_fit_validation(scheme):
    with pytest.raises(AmicoError):
        dti_fit(scheme, np.ones(scheme.K + 1))
    # keep the b=0 row plus five diffusion-weighted rows: too few
    small = scheme.subsample(np.arange(6))
    with pytest.raises(AmicoError):
        dti_fit(small, np.ones(6))


def test_tensor_fit_validation():
    asym = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(AmicoError):
        TensorFit(asym, E_Z, 0.0)
    with pytest.raises(AmicoError):
        TensorFit(np.eye(3), np.array([0.0, 0.0, 2.0]), 0.0)


# ---------------------------------------------------------------------------
# params_from_fractions


@pytest.fixture(scope="module")
def unit_dict(scheme):
    return build_dictionary(scheme, E_Z)


def test_single_atom_fraction_is_exact(unit_dict):
    j = 17
    f = np.zeros(unit_dict.width)
    f[j] = 0.42
    micro = params_from_fractions(MixtureFractions(f), unit_dict)
    assert micro.v_ic == pytest.approx(unit_dict.vic_atoms[j], abs=1e-15)
    assert micro.od == pytest.approx(
        od_from_kappa(unit_dict.kappa_atoms[j]), abs=1e-15)
    assert micro.v_iso == 0.0
    assert not micro.degenerate


def test_isotropic_only_triggers_zero_fraction_rule(unit_dict):
    f = np.zeros(unit_dict.width)
    f[-1] = 0.8
    micro = params_from_fractions(MixtureFractions(f), unit_dict)
    assert micro.v_iso == pytest.approx(0.8)
    assert micro.degenerate
    assert micro.v_ic == 0.0
    assert micro.od == 1.0


def test_two_equal_atoms_average(unit_dict):
    i, j = 3, 100
    f = np.zeros(unit_dict.width)
    f[[i, j]] = 0.25
    micro = params_from_fractions(MixtureFractions(f), unit_dict)
    expect_vic = 0.5 * (unit_dict.vic_atoms[i] + unit_dict.vic_atoms[j])
    expect_kappa = 0.5 * (unit_dict.kappa_atoms[i] + unit_dict.kappa_atoms[j])
    assert micro.v_ic == pytest.approx(expect_vic, rel=1e-12)
    assert micro.od == pytest.approx(od_from_kappa(expect_kappa), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0))
def test_aniso_scale_invariance(c):
    grid = default_grid()
    vic = np.repeat(grid.vic_values, grid.kappa_values.size)
    kappa = np.tile(grid.kappa_values, grid.vic_values.size)

    class _Stub:
        width = vic.size + 1
        vic_atoms = vic
        kappa_atoms = kappa

    rng = np.random.default_rng(7)
    f = rng.random(_Stub.width) * 0.05
    base = params_from_fractions(MixtureFractions(f), _Stub)
    scaled = f.copy()
    scaled[:-1] *= c
    out = params_from_fractions(MixtureFractions(scaled), _Stub)
    assert out.v_ic == pytest.approx(base.v_ic, rel=1e-9)
    assert out.od == pytest.approx(base.od, rel=1e-9)
    assert out.v_iso == base.v_iso


def test_estimates_stay_in_grid_hull(unit_dict, rng):
    vic_lo, vic_hi = unit_dict.vic_atoms.min(), unit_dict.vic_atoms.max()
    od_lo = od_from_kappa(unit_dict.kappa_atoms.max())
    od_hi = od_from_kappa(unit_dict.kappa_atoms.min())
    for _ in range(20):
        f = rng.random(unit_dict.width) * 0.1
        micro = params_from_fractions(MixtureFractions(f), unit_dict)
        assert vic_lo - 1e-12 <= micro.v_ic <= vic_hi + 1e-12
        assert od_lo - 1e-12 <= micro.od <= od_hi + 1e-12


def test_viso_clamped_raw_retained(unit_dict):
    f = np.zeros(unit_dict.width)
    f[0] = 0.1
    f[-1] = 1.7
    micro = params_from_fractions(MixtureFractions(f), unit_dict)
    assert micro.v_iso == 1.0
    assert micro.raw_v_iso == pytest.approx(1.7)


def test_fraction_length_mismatch(unit_dict):
    with pytest.raises(AmicoError):
        params_from_fractions(MixtureFractions(np.ones(3)), unit_dict)


def test_microstructure_rejects_unclamped():
    with pytest.raises(AmicoError):
        Microstructure(1.2, 0.0, 0.5, 1.2, 0.0, 0.5)


# ---------------------------------------------------------------------------
# amico_estimate


def test_grid_point_recovery(scheme):
    grid = default_grid()
    spacing_vic = np.max(np.diff(grid.vic_values))
    for iv, ik in [(2, 3), (5, 7), (8, 1), (10, 10), (0, 5)]:
        vic = grid.vic_values[iv]
        kappa = grid.kappa_values[ik]
        params = TissueParams(v_ic=vic, v_iso=0.0, kappa=kappa, mu=E_Z)
        y = synthesize(scheme, params)
        micro, fit, _ = amico_estimate(scheme, y)
        assert abs(micro.v_ic - vic) <= 0.09
        assert abs(micro.od - od_from_kappa(kappa)) <= 0.09
        assert abs(fit.principal_direction @ E_Z) > 0.99
    assert spacing_vic <= 0.09


def test_pure_csf_voxel(scheme):
    y = aiso_signal(scheme)
    micro, _, _ = amico_estimate(scheme, y)
    assert micro.v_iso >= 0.95


def test_estimate_with_prebuilt_dictionary(scheme):
    params = TissueParams(v_ic=0.6, v_iso=0.1, kappa=3.0, mu=E_Z)
    y = synthesize(scheme, params)
    fit = dti_fit(scheme, y)
    prebuilt = build_dictionary(scheme, fit.principal_direction)
    auto = amico_estimate(scheme, y)
    manual = amico_estimate(scheme, y, dictionary=prebuilt)
    assert manual[0] == auto[0]
    assert np.array_equal(manual[2].values, auto[2].values)


# ---------------------------------------------------------------------------
# amico_batch


@pytest.fixture(scope="module")
def batch_signals(scheme):
    rng = np.random.default_rng(11)
    rows = []
    for _ in range(6):
        mu = rng.normal(size=3)
        mu /= np.linalg.norm(mu)
        params = TissueParams(v_ic=rng.uniform(0.2, 0.9),
                              v_iso=rng.uniform(0.0, 0.3),
                              kappa=rng.uniform(0.5, 10.0), mu=mu)
        rows.append(synthesize(scheme, params))
    return np.array(rows)


def test_batch_order_and_determinism(scheme, batch_signals):
    out = amico_batch(scheme, batch_signals)
    singles = [amico_estimate(scheme, y)[0] for y in batch_signals]
    assert [r.microstructure for r in out] == singles
    again = amico_batch(scheme, batch_signals)
    assert [r.microstructure for r in again] == [r.microstructure for r in out]


def test_batch_identical_voxels_identical_outputs(scheme, batch_signals):
    tiled = np.tile(batch_signals[2], (4, 1))
    out = amico_batch(scheme, tiled)
    assert all(r.microstructure == out[0].microstructure for r in out)


def test_batch_threaded_matches_serial(scheme, batch_signals):
    serial = amico_batch(scheme, batch_signals, n_jobs=1)
    threaded = amico_batch(scheme, batch_signals, n_jobs=2)
    for a, b in zip(serial, threaded):
        assert a.microstructure == b.microstructure
        assert a.fit_residual == b.fit_residual


def test_batch_residual_definition(scheme, batch_signals):
    res = amico_batch(scheme, batch_signals[:2])
    for r, y in zip(res, batch_signals[:2]):
        d = build_dictionary(scheme, r.tensor_fit.principal_direction)
        expect = np.linalg.norm(d.matrix @ r.fractions.values - y)
        assert r.fit_residual == pytest.approx(expect, abs=1e-12)


def test_batch_shape_validation(scheme):
    with pytest.raises(AmicoError):
        amico_batch(scheme, np.ones(scheme.K))
    with pytest.raises(AmicoError):
        amico_batch(scheme, np.ones((3, scheme.K + 2)))


# ---------------------------------------------------------------------------
# CSV export


def test_write_amico_csv(tmp_path, scheme, batch_signals):
    res = amico_batch(scheme, batch_signals[:3])
    path = tmp_path / "amico.csv"
    write_amico_csv(res, path, voxel_ids=[10, 11, 12])
    lines = path.read_text().splitlines()
    assert lines[0] == "voxel_id,v_ic,v_iso,od,mu_x,mu_y,mu_z,residual"
    assert len(lines) == 4
    first = lines[1].split(",")
    assert first[0] == "10"
    assert float(first[1]) == res[0].microstructure.v_ic
    assert float(first[7]) == res[0].fit_residual


def test_write_amico_csv_default_ids(tmp_path, scheme, batch_signals):
    res = amico_batch(scheme, batch_signals[:2])
    path = tmp_path / "amico.csv"
    write_amico_csv(res, path)
    rows = path.read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["0", "1"]
