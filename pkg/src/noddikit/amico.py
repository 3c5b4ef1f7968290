"""AMICO baseline: DTI orientation, dictionary fit, parameter readout.

Per voxel the pipeline is linear: estimate the mean orientation mu with a
log-linear tensor fit on the lowest shell, build the coupled response
dictionary for that mu, solve the regularized NNLS problem for mixture
fractions, and convert the fractions to (v_ic, v_iso, od) by weighted
averaging over the anisotropic atoms.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .dictionary import Dictionary, ParamGrid, build_dictionary, default_grid
from .quadrature import SphereQuadrature, default_quadrature
from .signal import DiffusivityConfig, od_from_kappa
from .solvers import MixtureFractions, SolverReport, nnls_regularized

#: Signal entries at or below zero are clamped here before the log fit.
LOG_CLAMP = 1e-6

#: Default per-voxel l1 weight is this factor times ||Phi^T y||_inf.
DEFAULT_BETA_SCALE = 1e-3


class AmicoError(ValueError):
    """Raised for unusable inputs to the AMICO pipeline."""


@dataclass(frozen=True)
class TensorFit:
    """Log-linear DTI fit result.

    ``tensor`` is the symmetric 3x3 diffusion tensor (mm^2/s),
    ``principal_direction`` its sign-normalized leading eigenvector and
    ``residual`` the Euclidean norm of the log-domain misfit over the
    rows used.  ``isotropic`` flags an eigenvalue spread below 1e-12,
    where the direction is fixed to e_z.
    """

    tensor: np.ndarray
    principal_direction: np.ndarray
    residual: float
    isotropic: bool = False

    def __post_init__(self):
        t = np.array(self.tensor, dtype=float)
        d = np.array(self.principal_direction, dtype=float)
        if t.shape != (3, 3) or np.max(np.abs(t - t.T)) > 1e-12:
            raise AmicoError("tensor must be symmetric 3x3")
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise AmicoError("principal_direction must be a unit 3-vector")
        t.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "tensor", t)
        object.__setattr__(self, "principal_direction", d)


@dataclass(frozen=True)
class Microstructure:
    """Estimated NODDI parameters for one voxel.

    ``v_ic``, ``v_iso`` and ``od`` are clamped to [0, 1]; the raw
    (unclamped) values are retained alongside.  ``degenerate`` is set
    when the anisotropic fractions all vanished and the zero-fraction
    convention (v_ic = 0, od = 1) was applied.
    """

    v_ic: float
    v_iso: float
    od: float
    raw_v_ic: float
    raw_v_iso: float
    raw_od: float
    degenerate: bool = False

    def __post_init__(self):
        for name in ("v_ic", "v_iso", "od"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise AmicoError(f"{name} must lie in [0, 1] after clamping")


def dti_fit(scheme, y) -> TensorFit:
    """Log-linear diffusion tensor fit on the lowest-b shell.

    Rows with b = 0 participate (they constrain nothing but cost
    nothing); at least 6 rows with b > 0 are required.  Signal entries
    <= 0 are clamped to 1e-6 before the log.

    The principal direction is the unit eigenvector of the largest
    eigenvalue with sign chosen so its z component is nonnegative
    (falling back to y, then x, when earlier components vanish).  An
    eigenvalue spread below 1e-12 marks the fit isotropic and the
    direction defaults to e_z.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (scheme.K,):
        raise AmicoError(f"signal length {y.shape} does not match scheme K={scheme.K}")
    b = scheme.bvalues
    positive = b[b > 0]
    if positive.size == 0:
        raise AmicoError("scheme has no diffusion-weighted rows")
    b_low = positive.min()
    use = (b == 0) | np.isclose(b, b_low)
    if np.count_nonzero(b[use] > 0) < 6:
        raise AmicoError("need at least 6 gradients with b > 0 on the lowest shell")
    g = scheme.directions[use]
    bu = b[use]
    logy = np.log(np.maximum(y[use], LOG_CLAMP))
    # ln y = -b g^T D g; unknowns [Dxx, Dyy, Dzz, Dxy, Dxz, Dyz]
    design = -bu[:, None] * np.column_stack([
        g[:, 0] ** 2, g[:, 1] ** 2, g[:, 2] ** 2,
        2 * g[:, 0] * g[:, 1], 2 * g[:, 0] * g[:, 2], 2 * g[:, 1] * g[:, 2],
    ])
    coef, *_ = np.linalg.lstsq(design, logy, rcond=None)
    tensor = np.array([
        [coef[0], coef[3], coef[4]],
        [coef[3], coef[1], coef[5]],
        [coef[4], coef[5], coef[2]],
    ])
    residual = float(np.linalg.norm(design @ coef - logy))
    evals, evecs = np.linalg.eigh(tensor)
    spread = float(evals[-1] - evals[0])
    if spread < 1e-12:
        return TensorFit(tensor, np.array([0.0, 0.0, 1.0]), residual,
                         isotropic=True)
    principal = evecs[:, -1]
    for comp in (2, 1, 0):
        if abs(principal[comp]) > 1e-12:
            if principal[comp] < 0:
                principal = -principal
            break
    return TensorFit(tensor, principal / np.linalg.norm(principal), residual)


def params_from_fractions(fractions: MixtureFractions,
                          dictionary: Dictionary) -> Microstructure:
    """NODDI parameters as fraction-weighted means over the atoms.

    v_ic and kappa are the f-weighted averages of the anisotropic atoms'
    grid values; v_iso is the isotropic coefficient itself; od maps the
    averaged kappa.  When the anisotropic mass is below 1e-12 the
    zero-fraction convention applies: v_ic = 0, od = 1, flagged.
    """
    f = fractions.values
    if f.size != dictionary.width:
        raise AmicoError(
            f"fraction length {f.size} does not match dictionary width {dictionary.width}")
    fa = f[:-1]
    raw_viso = float(f[-1])
    mass = float(fa.sum())
    if mass < 1e-12:
        raw_vic, raw_od, degenerate = 0.0, 1.0, True
    else:
        raw_vic = float(fa @ dictionary.vic_atoms) / mass
        kappa = float(fa @ dictionary.kappa_atoms) / mass
        raw_od = float(od_from_kappa(kappa))
        degenerate = False
    clamp = lambda v: float(min(max(v, 0.0), 1.0))
    return Microstructure(
        v_ic=clamp(raw_vic), v_iso=clamp(raw_viso), od=clamp(raw_od),
        raw_v_ic=raw_vic, raw_v_iso=raw_viso, raw_od=raw_od,
        degenerate=degenerate)


def amico_estimate(scheme, y, grid: ParamGrid | None = None,
                   cfg: DiffusivityConfig | None = None,
                   quad: SphereQuadrature | None = None,
                   alpha: float = 0.0,
                   beta_scale: float = DEFAULT_BETA_SCALE,
                   solver_max_iter: int = 1000,
                   dictionary: Dictionary | None = None,
                   ) -> tuple[Microstructure, TensorFit, MixtureFractions]:
    """Full AMICO pipeline for one voxel.

    The l1 weight is ``beta_scale * ||Phi^T y||_inf``, scaled per voxel
    so regularization strength tracks the signal level.  A prebuilt
    ``dictionary`` (e.g. from a memo cache) skips the per-mu build.
    """
    grid = grid or default_grid()
    cfg = cfg or DiffusivityConfig()
    quad = quad or default_quadrature()
    y = np.asarray(y, dtype=float)
    fit = dti_fit(scheme, y)
    if dictionary is None:
        dictionary = build_dictionary(scheme, fit.principal_direction, grid,
                                      cfg, quad)
    beta = beta_scale * float(np.max(np.abs(dictionary.matrix.T @ y)))
    fractions, _ = nnls_regularized(dictionary, y, alpha=alpha, beta=beta,
                                    max_iter=solver_max_iter)
    micro = params_from_fractions(fractions, dictionary)
    return micro, fit, fractions


@dataclass(frozen=True)
class AmicoResult:
    """Batch output for one voxel; ``fit_residual`` is ||Phi f - y||_2."""

    microstructure: Microstructure
    tensor_fit: TensorFit
    fractions: MixtureFractions
    fit_residual: float


class _DictionaryMemo:
    """Pure memo of dictionaries keyed by exact orientation bytes."""

    def __init__(self, scheme, grid, cfg, quad):
        self._args = (scheme, grid, cfg, quad)
        self._cache = {}
        self._lock = threading.Lock()

    def get(self, mu: np.ndarray) -> Dictionary:
        key = np.asarray(mu, dtype=float).tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        scheme, grid, cfg, quad = self._args
        built = build_dictionary(scheme, mu, grid, cfg, quad)
        with self._lock:
            return self._cache.setdefault(key, built)


def amico_batch(scheme, signals, grid: ParamGrid | None = None,
                cfg: DiffusivityConfig | None = None,
                quad: SphereQuadrature | None = None,
                alpha: float = 0.0,
                beta_scale: float = DEFAULT_BETA_SCALE,
                solver_max_iter: int = 1000,
                n_jobs: int = 1) -> list:
    """AMICO over an (n, K) signal array; order follows the input.

    Returns a list of :class:`AmicoResult`, one per voxel.  Voxels are
    independent; a shared dictionary memo serves voxels whose DTI
    orientations coincide exactly.
    """
    grid = grid or default_grid()
    cfg = cfg or DiffusivityConfig()
    quad = quad or default_quadrature()
    signals = np.asarray(signals, dtype=float)
    if signals.ndim != 2 or signals.shape[1] != scheme.K:
        raise AmicoError("signals must be (n_voxels, K)")
    memo = _DictionaryMemo(scheme, grid, cfg, quad)

    def one(y):
        fit = dti_fit(scheme, y)
        dictionary = memo.get(fit.principal_direction)
        beta = beta_scale * float(np.max(np.abs(dictionary.matrix.T @ y)))
        fractions, _ = nnls_regularized(dictionary, y, alpha=alpha, beta=beta,
                                        max_iter=solver_max_iter)
        resid = float(np.linalg.norm(dictionary.matrix @ fractions.values - y))
        return AmicoResult(params_from_fractions(fractions, dictionary),
                           fit, fractions, resid)

    if n_jobs == 1:
        return [one(y) for y in signals]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(one)(y) for y in signals)


def write_amico_csv(results, path, voxel_ids=None) -> None:
    """Per-voxel batch results as CSV.

    Columns: voxel_id, v_ic, v_iso, od, mu_x, mu_y, mu_z, residual.
    Values are the clamped estimates; ``residual`` is the dictionary-fit
    misfit ||Phi f - y||_2.
    """
    if voxel_ids is None:
        voxel_ids = range(len(results))
    with open(path, "w") as fh:
        fh.write("voxel_id,v_ic,v_iso,od,mu_x,mu_y,mu_z,residual\n")
        for vid, res in zip(voxel_ids, results):
            micro = res.microstructure
            mu = res.tensor_fit.principal_direction
            fh.write(f"{vid},{micro.v_ic:.17g},{micro.v_iso:.17g},"
                     f"{micro.od:.17g},{mu[0]:.17g},{mu[1]:.17g},"
                     f"{mu[2]:.17g},{res.fit_residual:.17g}\n")
