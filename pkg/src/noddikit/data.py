"""Synthetic voxel datasets: phantom sampling, noise, persistence.

A dataset is a bag of per-voxel normalized signal vectors on a common
acquisition scheme, optionally carrying the generative truth both as
training targets (v_ic, v_iso, od) and as full tissue parameters.
Generation is reproducible and parallel-safe: every voxel draws from
its own counter-based stream seeded by (seed, voxel_id), so serial and
parallel generation agree bit-exactly.

The on-disk format (``VDS1``) is line-oriented text: a header with K
and the voxel count, the scheme block in the standard scheme format,
then one CSV row per voxel holding the id, K signal values, optionally
the 3 target values and optionally the 4 remaining truth values
(kappa, mu_x, mu_y, mu_z).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .amico import Microstructure, amico_batch
from .dictionary import ParamGrid
from .quadrature import SphereQuadrature
from .scheme import AcquisitionScheme, format_scheme, parse_scheme
from .signal import (
    DiffusivityConfig,
    TissueParams,
    kappa_from_od,
    od_from_kappa,
    synthesize,
)

NOISE_MODELS = ("none", "gaussian", "rician")

#: Parameter ranges used when none are given: fractions uniform on
#: [0, 1], orientation dispersion uniform on [0.03, 0.95].
DEFAULT_RANGES = {"v_ic": (0.0, 1.0), "v_iso": (0.0, 1.0),
                  "od": (0.03, 0.95)}


class DataError(ValueError):
    """Raised for invalid datasets, noise specs, or dataset files."""


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model for signal corruption.

    ``snr`` is measured against the b=0 signal level S_0 = 1, so the
    per-channel noise standard deviation is 1/snr.
    """

    model: str = "rician"
    snr: float = 30.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in NOISE_MODELS:
            raise DataError(f"noise model must be one of {NOISE_MODELS}")
        if self.model != "none" and not self.snr > 0:
            raise DataError("snr must be positive")

    @property
    def sigma(self) -> float:
        return 0.0 if self.model == "none" else 1.0 / self.snr


@dataclass(frozen=True)
class VoxelDataset:
    """Per-voxel signals on a shared scheme, with optional truth.

    ``targets`` (when present) are the training targets as
    Microstructure instances; ``truth_params`` the full generative
    TissueParams.  All per-voxel sequences have equal length.
    """

    scheme: AcquisitionScheme
    signals: np.ndarray
    targets: tuple | None = None
    truth_params: tuple | None = None
    ids: np.ndarray | None = None

    def __post_init__(self):
        sig = np.array(self.signals, dtype=float)
        if sig.ndim != 2 or sig.shape[1] != self.scheme.K:
            raise DataError(
                f"signals must be (n, {self.scheme.K}), got {sig.shape}")
        n = sig.shape[0]
        if n < 1:
            raise DataError("dataset needs at least one voxel")
        if not np.all(np.isfinite(sig)):
            raise DataError("signals must be finite")
        ids = (np.arange(n) if self.ids is None
               else np.array(self.ids, dtype=int))
        if ids.shape != (n,):
            raise DataError("ids must match the voxel count")
        for name in ("targets", "truth_params"):
            seq = getattr(self, name)
            if seq is not None:
                if len(seq) != n:
                    raise DataError(f"{name} must match the voxel count")
                object.__setattr__(self, name, tuple(seq))
        sig.setflags(write=False)
        ids.setflags(write=False)
        object.__setattr__(self, "signals", sig)
        object.__setattr__(self, "ids", ids)

    @property
    def n_voxels(self) -> int:
        return self.signals.shape[0]

    def target_array(self) -> np.ndarray:
        """Targets as an (n, 3) array with columns (v_ic, v_iso, od)."""
        if self.targets is None:
            raise DataError("dataset has no targets")
        return np.array([[m.raw_v_ic, m.raw_v_iso, m.raw_od]
                         for m in self.targets])


def normalize_dwi(raw, s0: float) -> np.ndarray:
    """Normalized signal y_k = S_k / S_0."""
    if not s0 > 0:
        raise DataError("degenerate voxel: baseline signal must be positive")
    return np.asarray(raw, dtype=float) / s0


def sample_params(rng, ranges: dict | None = None) -> TissueParams:
    """One random voxel: fractions uniform, od uniform mapped through
    kappa_from_od, orientation uniform on the sphere.

    Draw order is fixed (v_ic, v_iso, od, mu) so a given generator
    state always yields the same voxel.
    """
    ranges = {**DEFAULT_RANGES, **(ranges or {})}
    lo, hi = ranges["v_ic"]
    v_ic = rng.uniform(lo, hi)
    lo, hi = ranges["v_iso"]
    v_iso = rng.uniform(lo, hi)
    lo, hi = ranges["od"]
    if not (0.0 < lo < hi < 1.0):
        raise DataError("od range must lie strictly inside (0, 1)")
    od = rng.uniform(lo, hi)
    mu = rng.standard_normal(3)
    norm = np.linalg.norm(mu)
    while norm < 1e-12:
        mu = rng.standard_normal(3)
        norm = np.linalg.norm(mu)
    return TissueParams(v_ic=v_ic, v_iso=v_iso,
                        kappa=float(kappa_from_od(od)), mu=mu / norm)


def add_noise(y, spec: NoiseSpec, rng=None) -> np.ndarray:
    """Corrupt a signal vector according to the noise spec.

    ``gaussian`` adds N(0, sigma^2); ``rician`` takes the magnitude
    sqrt((y + e1)^2 + e2^2) of two independent Gaussian corruptions,
    the physically appropriate model for magnitude MR images.  Without
    an explicit generator a fresh one is seeded from ``spec.seed``.
    """
    y = np.asarray(y, dtype=float)
    if spec.model == "none":
        return y.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    sigma = spec.sigma
    if spec.model == "gaussian":
        return y + rng.normal(0.0, sigma, size=y.shape)
    e1 = rng.normal(0.0, sigma, size=y.shape)
    e2 = rng.normal(0.0, sigma, size=y.shape)
    return np.sqrt((y + e1) ** 2 + e2 ** 2)


def subsample_scheme(dense: AcquisitionScheme, indices) -> AcquisitionScheme:
    """Scheme restricted to ``indices`` in the given order."""
    return dense.subsample(indices)


def subsample_dataset(dataset: VoxelDataset, indices) -> VoxelDataset:
    """Restrict every voxel's measurements to ``indices``.

    The scheme and signal columns are subsampled together; targets and
    truth parameters are untouched (they do not depend on gradients).
    """
    scheme = dataset.scheme.subsample(indices)
    idx = np.asarray(indices, dtype=int)
    return replace(dataset, scheme=scheme, signals=dataset.signals[:, idx])


def _truth_to_target(p: TissueParams) -> Microstructure:
    return Microstructure(v_ic=p.v_ic, v_iso=p.v_iso, od=p.od,
                          raw_v_ic=p.v_ic, raw_v_iso=p.v_iso, raw_od=p.od)


def make_dataset(scheme: AcquisitionScheme, n: int,
                 noise: NoiseSpec | None = None,
                 cfg: DiffusivityConfig | None = None,
                 quad: SphereQuadrature | None = None,
                 seed: int = 0,
                 ranges: dict | None = None) -> VoxelDataset:
    """Generate n synthetic voxels with analytic truth attached.

    Each voxel i draws its parameters and its noise from the stream
    default_rng([seed, i]); the noiseless signal is synthesized from
    the three-compartment model, then corrupted per ``noise`` (Rician
    at SNR 30 by default).  The truth is stored both as full
    TissueParams and as (v_ic, v_iso, od) targets.
    """
    if n < 1:
        raise DataError("need at least one voxel")
    noise = noise if noise is not None else NoiseSpec()
    signals = np.empty((n, scheme.K))
    truth, targets = [], []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        p = sample_params(rng, ranges)
        y = synthesize(scheme, p, cfg=cfg, quad=quad)
        signals[i] = add_noise(y, noise, rng)
        truth.append(p)
        targets.append(_truth_to_target(p))
    return VoxelDataset(scheme=scheme, signals=signals,
                        targets=tuple(targets), truth_params=tuple(truth))


def gold_standard_amico(dataset: VoxelDataset,
                        grid: ParamGrid | None = None,
                        cfg: DiffusivityConfig | None = None,
                        quad: SphereQuadrature | None = None,
                        alpha: float = 0.0, beta_scale: float = 1e-3,
                        solver_max_iter: int = 1000,
                        n_jobs: int = 1) -> list:
    """Dictionary-fit microstructure for every voxel of (ideally) a
    densely sampled dataset, for workflows without analytic truth."""
    results = amico_batch(dataset.scheme, dataset.signals, grid=grid,
                          cfg=cfg, quad=quad, alpha=alpha,
                          beta_scale=beta_scale,
                          solver_max_iter=solver_max_iter, n_jobs=n_jobs)
    return [r.microstructure for r in results]


# --------------------------------------------------------------------------
# dataset files
# --------------------------------------------------------------------------

_VDS_MAGIC = "VDS1"


def _fmt(values) -> str:
    return ",".join(f"{v:.17g}" for v in values)


def save_dataset(dataset: VoxelDataset, path) -> None:
    """Write the VDS1 text format.

    Truth parameters can only be stored alongside targets: the file
    keeps (kappa, mu) in the truth columns and recovers the fractions
    from the target columns on load.
    """
    has_targets = dataset.targets is not None
    has_truth = dataset.truth_params is not None
    if has_truth and not has_targets:
        raise DataError("cannot save truth parameters without targets")
    with open(path, "w") as fh:
        fh.write(f"{_VDS_MAGIC} K={dataset.scheme.K} n={dataset.n_voxels} "
                 f"targets={int(has_targets)} truth={int(has_truth)}\n")
        fh.write("# scheme: gx gy gz b\n")
        fh.write(format_scheme(dataset.scheme))
        fh.write("# voxels: id,signals" +
                 (",v_ic,v_iso,od" if has_targets else "") +
                 (",kappa,mu_x,mu_y,mu_z" if has_truth else "") + "\n")
        for i in range(dataset.n_voxels):
            fields = [f"{dataset.ids[i]:d}", _fmt(dataset.signals[i])]
            if has_targets:
                m = dataset.targets[i]
                fields.append(_fmt([m.raw_v_ic, m.raw_v_iso, m.raw_od]))
            if has_truth:
                p = dataset.truth_params[i]
                fields.append(_fmt([p.kappa, *p.mu]))
            fh.write(",".join(fields) + "\n")


def _clamp01(v: float) -> float:
    return float(min(max(v, 0.0), 1.0))


def load_dataset(path) -> VoxelDataset:
    """Read a dataset written by :func:`save_dataset`.

    Target values are clamped to [0, 1] on load (raw values retained on
    the Microstructure instances); malformed files raise DataError.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = [ln.strip() for ln in lines]
    body = [ln for ln in body if ln and not ln.startswith("#")]
    if not body or not body[0].startswith(_VDS_MAGIC + " "):
        raise DataError(f"not a {_VDS_MAGIC} dataset file: {path}")
    header = dict(tok.split("=", 1) for tok in body[0].split()[1:])
    try:
        k = int(header["K"])
        n = int(header["n"])
        has_targets = bool(int(header["targets"]))
        has_truth = bool(int(header["truth"]))
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed dataset header: {exc}") from None
    if has_truth and not has_targets:
        raise DataError("truth columns require target columns")
    if len(body) != 1 + k + n:
        raise DataError(f"expected {1 + k + n} content lines, got {len(body)}")
    scheme = parse_scheme("\n".join(body[1:1 + k]))
    if scheme.K != k:
        raise DataError("scheme block does not match header K")

    n_fields = 1 + k + 3 * has_targets + 4 * has_truth
    ids = np.empty(n, dtype=int)
    signals = np.empty((n, k))
    targets, truth = [], []
    for row, line in enumerate(body[1 + k:]):
        parts = line.split(",")
        if len(parts) != n_fields:
            raise DataError(
                f"voxel row {row}: expected {n_fields} fields, got {len(parts)}")
        try:
            ids[row] = int(parts[0])
            values = np.array([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise DataError(f"voxel row {row}: {exc}") from None
        signals[row] = values[:k]
        pos = k
        if has_targets:
            v_ic, v_iso, od = values[pos:pos + 3]
            targets.append(Microstructure(
                v_ic=_clamp01(v_ic), v_iso=_clamp01(v_iso), od=_clamp01(od),
                raw_v_ic=float(v_ic), raw_v_iso=float(v_iso),
                raw_od=float(od)))
            pos += 3
        if has_truth:
            kappa, mx, my, mz = values[pos:pos + 4]
            truth.append(TissueParams(v_ic=float(v_ic), v_iso=float(v_iso),
                                      kappa=float(kappa),
                                      mu=np.array([mx, my, mz])))
    return VoxelDataset(scheme=scheme, signals=signals,
                        targets=tuple(targets) if has_targets else None,
                        truth_params=tuple(truth) if has_truth else None,
                        ids=ids)
