import numpy as np
import pytest
from dataclasses import replace

from noddikit.data import (
    DEFAULT_RANGES,
    DataError,
    NoiseSpec,
    VoxelDataset,
    add_noise,
    gold_standard_amico,
    load_dataset,
    make_dataset,
    normalize_dwi,
    sample_params,
    save_dataset,
    subsample_dataset,
    subsample_scheme,
)
from noddikit.dictionary import default_grid
from noddikit.scheme import two_shell_60
from noddikit.signal import TissueParams, od_from_kappa, synthesize

E_Z = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# NoiseSpec


def test_noise_spec_defaults_and_sigma():
    spec = NoiseSpec()
    assert spec.model == "rician"
    assert spec.snr == 30.0
    assert spec.sigma == pytest.approx(1.0 / 30.0)
    assert NoiseSpec("none", snr=0.0).sigma == 0.0


def test_noise_spec_validation():
    with pytest.raises(DataError):
        NoiseSpec("salt-and-pepper")
    with pytest.raises(DataError):
        NoiseSpec("rician", snr=0.0)
    with pytest.raises(DataError):
        NoiseSpec("gaussian", snr=-3.0)


# ---------------------------------------------------------------------------
# VoxelDataset


def test_dataset_validation(scheme):
    good = VoxelDataset(scheme, np.ones((2, scheme.K)))
    assert good.n_voxels == 2
    assert np.array_equal(good.ids, [0, 1])
    with pytest.raises(DataError):
        VoxelDataset(scheme, np.ones((2, scheme.K + 1)))
    with pytest.raises(DataError):
        VoxelDataset(scheme, np.ones((0, scheme.K)))
    bad = np.ones((2, scheme.K))
    bad[0, 0] = np.nan
    with pytest.raises(DataError):
        VoxelDataset(scheme, bad)
    with pytest.raises(DataError):
        VoxelDataset(scheme, np.ones((2, scheme.K)), ids=np.arange(3))
    with pytest.raises(ValueError):
        good.signals[0, 0] = 2.0


def test_dataset_target_array(scheme):
    ds = make_dataset(scheme, 3, noise=NoiseSpec("none"), seed=0)
    arr = ds.target_array()
    assert arr.shape == (3, 3)
    for row, m in zip(arr, ds.targets):
        assert tuple(row) == (m.raw_v_ic, m.raw_v_iso, m.raw_od)
    bare = VoxelDataset(scheme, ds.signals)
    with pytest.raises(DataError):
        bare.target_array()


def test_dataset_length_mismatch(scheme):
    ds = make_dataset(scheme, 3, noise=NoiseSpec("none"), seed=0)
    with pytest.raises(DataError):
        VoxelDataset(scheme, ds.signals, targets=ds.targets[:2])


# ---------------------------------------------------------------------------
# normalize_dwi


def test_normalize_examples():
    assert np.array_equal(normalize_dwi([2.0, 2.0, 2.0], 2.0), np.ones(3))
    assert np.array_equal(normalize_dwi([1.0, 0.5], 2.0), [0.5, 0.25])
    with pytest.raises(DataError):
        normalize_dwi([1.0], 0.0)
    with pytest.raises(DataError):
        normalize_dwi([1.0], -2.0)


# ---------------------------------------------------------------------------
# sample_params


def test_sample_params_law_of_large_numbers():
    rng = np.random.default_rng(0)
    draws = [sample_params(rng) for _ in range(10_000)]
    v_ic = np.array([p.v_ic for p in draws])
    od = np.array([p.od for p in draws])
    assert 0.47 <= v_ic.mean() <= 0.53
    assert np.all((od >= 0.03) & (od <= 0.95))
    for p in draws[:100]:
        assert abs(np.linalg.norm(p.mu) - 1.0) < 1e-12
        assert p.kappa > 0


def test_sample_params_deterministic():
    a = [sample_params(np.random.default_rng(42)) for _ in range(3)]
    b = [sample_params(np.random.default_rng(42)) for _ in range(3)]
    for pa, pb in zip(a, b):
        assert pa.v_ic == pb.v_ic
        assert np.array_equal(pa.mu, pb.mu)


def test_sample_params_custom_ranges():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p = sample_params(rng, {"v_ic": (0.4, 0.6), "od": (0.2, 0.3)})
        assert 0.4 <= p.v_ic <= 0.6
        assert 0.2 <= p.od <= 0.3
        assert 0.0 <= p.v_iso <= 1.0


def test_sample_params_od_range_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(DataError):
        sample_params(rng, {"od": (0.0, 0.5)})
    with pytest.raises(DataError):
        sample_params(rng, {"od": (0.5, 1.0)})


# ---------------------------------------------------------------------------
# add_noise


def test_add_noise_none_is_identity(rng):
    y = rng.random(10)
    out = add_noise(y, NoiseSpec("none"))
    assert np.array_equal(out, y)
    assert out is not y


def test_add_noise_rician_properties(rng):
    y = rng.random(200) * 0.5
    out = add_noise(y, NoiseSpec("rician", snr=5.0))
    assert np.all(out >= 0)
    calm = add_noise(y, NoiseSpec("rician", snr=1e12))
    assert np.max(np.abs(calm - y)) < 1e-9


def test_add_noise_gaussian_determinism(rng):
    y = rng.random(50)
    spec = NoiseSpec("gaussian", snr=10.0, seed=3)
    assert np.array_equal(add_noise(y, spec), add_noise(y, spec))
    # explicit generator overrides NoiseSpec.seed and advances
    gen = np.random.default_rng(3)
    first = add_noise(y, spec, gen)
    second = add_noise(y, spec, gen)
    assert not np.array_equal(first, second)
    assert np.array_equal(first, add_noise(y, spec))


def test_add_noise_gaussian_scale(rng):
    y = np.zeros(200_000)
    out = add_noise(y, NoiseSpec("gaussian", snr=20.0, seed=0))
    assert np.std(out) == pytest.approx(1.0 / 20.0, rel=0.02)


# ---------------------------------------------------------------------------
# subsampling


def test_subsample_scheme_prefix(dense_scheme, scheme):
    sub = subsample_scheme(dense_scheme, np.arange(scheme.K))
    assert np.array_equal(sub.directions, scheme.directions)
    assert np.array_equal(sub.bvalues, scheme.bvalues)


def test_subsample_dataset_columns_and_targets(dense_scheme, scheme):
    ds = make_dataset(dense_scheme, 4, noise=NoiseSpec("none"), seed=5)
    sub = subsample_dataset(ds, np.arange(scheme.K))
    assert sub.scheme.K == scheme.K
    assert np.array_equal(sub.signals, ds.signals[:, :scheme.K])
    assert sub.targets == ds.targets
    assert sub.truth_params == ds.truth_params


def test_subsample_composition(dense_scheme):
    ds = make_dataset(dense_scheme, 2, noise=NoiseSpec("none"), seed=6)
    i1 = np.array([0, 5, 10, 20, 40, 60, 80])
    i2 = np.array([6, 0, 3])
    double = subsample_dataset(subsample_dataset(ds, i1), i2)
    single = subsample_dataset(ds, i1[i2])
    assert np.array_equal(double.signals, single.signals)
    assert np.array_equal(double.scheme.bvalues, single.scheme.bvalues)


# ---------------------------------------------------------------------------
# make_dataset


def test_make_dataset_noiseless_matches_synthesize(scheme):
    ds = make_dataset(scheme, 5, noise=NoiseSpec("none"), seed=9)
    for i in range(5):
        expect = synthesize(scheme, ds.truth_params[i])
        assert np.array_equal(ds.signals[i], expect)
        m = ds.targets[i]
        p = ds.truth_params[i]
        assert m.raw_v_ic == p.v_ic
        assert m.raw_v_iso == p.v_iso
        assert m.raw_od == pytest.approx(od_from_kappa(p.kappa), abs=1e-15)


def test_make_dataset_deterministic(scheme):
    a = make_dataset(scheme, 4, seed=2)
    b = make_dataset(scheme, 4, seed=2)
    c = make_dataset(scheme, 4, seed=3)
    assert np.array_equal(a.signals, b.signals)
    assert not np.array_equal(a.signals, c.signals)


def test_make_dataset_per_voxel_streams(scheme):
    # voxel i depends only on (seed, i), not on the total count
    small = make_dataset(scheme, 3, seed=7)
    large = make_dataset(scheme, 6, seed=7)
    assert np.array_equal(small.signals, large.signals[:3])
    for a, b in zip(small.truth_params, large.truth_params[:3]):
        assert a.v_ic == b.v_ic and a.kappa == b.kappa
        assert np.array_equal(a.mu, b.mu)


def test_make_dataset_noise_level(scheme):
    clean = make_dataset(scheme, 10, noise=NoiseSpec("none"), seed=1)
    noisy = make_dataset(scheme, 10, noise=NoiseSpec("rician", 30.0), seed=1)
    err = noisy.signals - clean.signals
    assert 0 < np.sqrt(np.mean(err ** 2)) < 5.0 / 30.0


def test_make_dataset_validation(scheme):
    with pytest.raises(DataError):
        make_dataset(scheme, 0)


def test_make_dataset_ranges_forwarded(scheme):
    ds = make_dataset(scheme, 5, noise=NoiseSpec("none"), seed=0,
                      ranges={"v_iso": (0.0, 0.0)})
    for p in ds.truth_params:
        assert p.v_iso == 0.0


# ---------------------------------------------------------------------------
# gold_standard_amico


def test_gold_standard_matches_truth_at_grid_points(scheme):
    grid = default_grid()
    params = [
        TissueParams(v_ic=grid.vic_values[3], v_iso=0.0,
                     kappa=grid.kappa_values[4], mu=E_Z),
        TissueParams(v_ic=grid.vic_values[8], v_iso=0.0,
                     kappa=grid.kappa_values[9], mu=E_Z),
    ]
    signals = np.array([synthesize(scheme, p) for p in params])
    ds = VoxelDataset(scheme, signals)
    gold = gold_standard_amico(ds)
    assert len(gold) == 2
    for m, p in zip(gold, params):
        assert abs(m.v_ic - p.v_ic) <= 0.09
        assert abs(m.od - p.od) <= 0.09
    again = gold_standard_amico(ds)
    assert gold == again


# ---------------------------------------------------------------------------
# VDS1 files


def test_dataset_roundtrip_full(tmp_path, scheme):
    ds = make_dataset(scheme, 4, seed=11)
    path = tmp_path / "d.vds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.signals, ds.signals)
    assert np.array_equal(back.ids, ds.ids)
    assert np.array_equal(back.scheme.directions, scheme.directions)
    for a, b in zip(back.targets, ds.targets):
        assert a == b
    for a, b in zip(back.truth_params, ds.truth_params):
        assert a.kappa == b.kappa
        assert np.array_equal(a.mu, b.mu)
        assert a.v_ic == b.v_ic


def test_dataset_roundtrip_targets_only(tmp_path, scheme):
    ds = make_dataset(scheme, 3, seed=12)
    trimmed = replace(ds, truth_params=None)
    path = tmp_path / "d.vds"
    save_dataset(trimmed, path)
    back = load_dataset(path)
    assert back.truth_params is None
    assert back.targets == ds.targets


def test_dataset_roundtrip_signals_only(tmp_path, scheme):
    ds = VoxelDataset(scheme, np.full((2, scheme.K), 0.5),
                      ids=np.array([5, 9]))
    path = tmp_path / "d.vds"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.targets is None
    assert back.truth_params is None
    assert np.array_equal(back.ids, [5, 9])


def test_save_truth_requires_targets(tmp_path, scheme):
    ds = make_dataset(scheme, 2, seed=13)
    bad = replace(ds, targets=None)
    with pytest.raises(DataError):
        save_dataset(bad, tmp_path / "d.vds")


def test_save_byte_identical(tmp_path, scheme):
    ds = make_dataset(scheme, 3, seed=14)
    p1, p2 = tmp_path / "a.vds", tmp_path / "b.vds"
    save_dataset(ds, p1)
    save_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()


def _tiny_vds(targets_line="7,1,0.5,0.4,0.2,1.2"):
    return "\n".join([
        "VDS1 K=2 n=1 targets=1 truth=0",
        "# scheme: gx gy gz b",
        "0 0 1 0",
        "1 0 0 1000",
        "# voxels: id,signals,v_ic,v_iso,od",
        targets_line,
        "",
    ])


def test_load_clamps_targets_keeps_raw(tmp_path):
    path = tmp_path / "t.vds"
    path.write_text(_tiny_vds())
    ds = load_dataset(path)
    assert ds.ids[0] == 7
    m = ds.targets[0]
    assert m.od == 1.0
    assert m.raw_od == pytest.approx(1.2)
    assert m.v_ic == pytest.approx(0.4)


def test_load_rejects_malformed(tmp_path):
    cases = [
        "WRONG K=2 n=1 targets=0 truth=0\n0 0 1 0\n1 0 0 1000\n0,1,0.5\n",
        "VDS1 K=two n=1 targets=0 truth=0\n0 0 1 0\n1 0 0 1000\n0,1,0.5\n",
        # header promises 2 voxels, file has 1
        "VDS1 K=2 n=2 targets=0 truth=0\n0 0 1 0\n1 0 0 1000\n0,1,0.5\n",
        # row with too few fields
        "VDS1 K=2 n=1 targets=0 truth=0\n0 0 1 0\n1 0 0 1000\n0,1\n",
        # non-numeric signal
        "VDS1 K=2 n=1 targets=0 truth=0\n0 0 1 0\n1 0 0 1000\n0,1,oops\n",
        # truth without targets is unrepresentable
        "VDS1 K=2 n=1 targets=0 truth=1\n0 0 1 0\n1 0 0 1000\n0,1,0.5,2,0,0,1\n",
    ]
    for i, text in enumerate(cases):
        path = tmp_path / f"bad{i}.vds"
        path.write_text(text)
        with pytest.raises(DataError):
            load_dataset(path)
