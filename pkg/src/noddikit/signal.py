"""Three-compartment diffusion signal model with Watson-dispersed sticks.

The normalized signal for gradient k is the convex combination

    y_k = (1 - v_iso) * (v_ic * A_ic_k + (1 - v_ic) * A_ec_k)
          + v_iso * A_iso_k

of an intra-cellular compartment (sticks whose orientation follows a
Watson distribution around a mean direction), an extra-cellular
compartment (anisotropic Gaussian diffusion with a Watson-averaged
cylindrical tensor and tortuosity-reduced perpendicular diffusivity) and
an isotropic free-water compartment.

Orientation dispersion is the scalar ``OD = (2/pi) * arctan(1/kappa)``
mapping the Watson concentration to (0, 1]: small OD means tightly
aligned sticks, OD = 1 means a uniform orientation distribution.

All Watson integrals are evaluated by spherical quadrature in a frame
aligned with the mean orientation, which makes every signal here a
function of the angle between gradient and mean orientation only -- and
therefore exactly rotation consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import QuadratureError, SphereQuadrature, default_quadrature

#: Standard in-vivo diffusivities (mm^2/s).
DEFAULT_D_PAR = 1.7e-3
DEFAULT_D_ISO = 3.0e-3


class SignalModelError(ValueError):
    """Raised for invalid signal-model inputs."""


@dataclass(frozen=True)
class DiffusivityConfig:
    """Fixed diffusivities of the model (mm^2/s)."""

    d_par: float = DEFAULT_D_PAR
    d_iso: float = DEFAULT_D_ISO

    def __post_init__(self):
        if not (self.d_par > 0 and self.d_iso > 0):
            raise SignalModelError("diffusivities must be positive")


@dataclass(frozen=True)
class TissueParams:
    """Generative parameters of one voxel.

    ``v_ic`` is the intra-cellular fraction within tissue, ``v_iso`` the
    free-water fraction, ``kappa`` the Watson concentration and ``mu``
    the mean stick orientation (unit vector).
    """

    v_ic: float
    v_iso: float
    kappa: float
    mu: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        if mu.shape != (3,):
            raise SignalModelError("mu must be a 3-vector")
        if abs(np.linalg.norm(mu) - 1.0) > 1e-6:
            raise SignalModelError("mu must be a unit vector (1e-6)")
        if not (0.0 <= self.v_ic <= 1.0 and 0.0 <= self.v_iso <= 1.0):
            raise SignalModelError("fractions must lie in [0, 1]")
        if self.kappa < 0:
            raise SignalModelError("kappa must be nonnegative")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def od(self) -> float:
        return float(od_from_kappa(self.kappa))


def od_from_kappa(kappa):
    """Orientation dispersion ``(2/pi) * arctan(1/kappa)``.

    Total on kappa >= 0: arctan2 gives the pi/2 limit at kappa = 0, so
    fully dispersed tissue maps to OD = 1 without a special case.
    """
    kappa = np.asarray(kappa, dtype=float)
    if np.any(kappa < 0):
        raise SignalModelError("kappa must be nonnegative")
    return (2.0 / np.pi) * np.arctan2(1.0, kappa)


def kappa_from_od(od):
    """Inverse of :func:`od_from_kappa` on the open interval (0, 1)."""
    od = np.asarray(od, dtype=float)
    if np.any(od <= 0.0) or np.any(od >= 1.0):
        raise SignalModelError("od must lie strictly inside (0, 1)")
    return 1.0 / np.tan(np.pi * od / 2.0)


def _watson_node_weights(kappa: float, quad: SphereQuadrature) -> np.ndarray:
    """Per-node Watson probability masses in the quadrature's own frame.

    Returns ``w_i * exp(kappa * t_i^2)`` normalized to sum to one, with
    t the polar cosine about the rule's axis.  The exponent is shifted
    by its maximum so large kappa cannot overflow.
    """
    t = quad.polar_cosines()
    logw = kappa * (t * t - 1.0)
    masses = quad.weights * np.exp(logw)
    return masses / masses.sum()


def watson_density(n, mu, kappa: float, quad: SphereQuadrature | None = None):
    """Watson density ``C(kappa) * exp(kappa * (mu . n)^2)`` at ``n``.

    The normalizer C makes the density integrate to one over the unit
    sphere; it is evaluated once per call with the supplied quadrature.
    ``n`` may be a single vector or an (..., 3) array.
    """
    if quad is None:
        quad = default_quadrature()
    if kappa < 0:
        raise SignalModelError("kappa must be nonnegative")
    n = np.asarray(n, dtype=float)
    mu = np.asarray(mu, dtype=float)
    t_axis = quad.polar_cosines()
    # C(kappa) is orientation independent; evaluate it in the rule's
    # aligned frame where the polar part carries all the variation.
    log_z = np.log(np.dot(quad.weights, np.exp(kappa * (t_axis * t_axis - 1.0))))
    cos2 = np.square(n @ mu)
    return np.exp(kappa * (cos2 - 1.0) - log_z)


def watson_tau1(kappa: float, quad: SphereQuadrature | None = None) -> float:
    """Watson second moment ``<(n . mu)^2>`` in [1/3, 1].

    Equals 1/3 for the uniform distribution (kappa = 0) and approaches 1
    as the distribution concentrates on the axis.
    """
    if quad is None:
        quad = default_quadrature()
    if kappa < 0:
        raise SignalModelError("kappa must be nonnegative")
    t = quad.polar_cosines()
    masses = _watson_node_weights(kappa, quad)
    return float(np.dot(masses, t * t))


def _watson_masses_table(kappas, quad: SphereQuadrature) -> np.ndarray:
    """Column-normalized Watson node masses for several kappas, (M, n)."""
    kappas = np.asarray(kappas, dtype=float)
    if np.any(kappas < 0):
        raise SignalModelError("kappa must be nonnegative")
    t = quad.polar_cosines()
    masses = quad.weights[:, None] * np.exp(np.outer(t * t - 1.0, kappas))
    return masses / masses.sum(axis=0)


def watson_tau1_table(kappas, quad: SphereQuadrature | None = None) -> np.ndarray:
    """:func:`watson_tau1` for a vector of kappas in one quadrature pass."""
    if quad is None:
        quad = default_quadrature()
    t = quad.polar_cosines()
    return (t * t) @ _watson_masses_table(kappas, quad)


def _cos_to_mu(scheme, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if abs(np.linalg.norm(mu) - 1.0) > 1e-6:
        raise SignalModelError("mu must be a unit vector")
    return np.clip(np.abs(scheme.directions @ mu), 0.0, 1.0)


def _any_perpendicular(axis: np.ndarray) -> np.ndarray:
    """A deterministic unit vector orthogonal to ``axis``."""
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = ref - axis * np.dot(ref, axis)
    return p / np.linalg.norm(p)


def aic_signal(scheme, mu, kappa: float, cfg: DiffusivityConfig | None = None,
               quad: SphereQuadrature | None = None) -> np.ndarray:
    """Intra-cellular (Watson-dispersed stick) signal per gradient.

    Integrates ``exp(-b * d_par * (g . n)^2)`` against the Watson
    density.  The quadrature is realigned so its axis coincides with
    ``mu``; the signal then depends on each gradient only through its
    angle to ``mu``, so jointly rotating ``mu`` and the gradients leaves
    the output unchanged.
    """
    return aic_signal_table(scheme, mu, [kappa], cfg, quad)[:, 0]


def aic_signal_table(scheme, mu, kappas, cfg: DiffusivityConfig | None = None,
                     quad: SphereQuadrature | None = None) -> np.ndarray:
    """:func:`aic_signal` for several kappas at once, (K, n_kappa).

    The exponential kernel over (gradient, node) pairs does not depend
    on kappa, so evaluating a whole dictionary's worth of concentrations
    costs one kernel plus a matrix product against the Watson masses.
    """
    cfg = cfg or DiffusivityConfig()
    if quad is None:
        quad = default_quadrature()
    if quad.n_nodes < 6:
        raise QuadratureError("need at least 6 quadrature nodes")
    masses = _watson_masses_table(kappas, quad)           # (M, n)
    t = quad.polar_cosines()
    perp = quad.nodes @ _any_perpendicular(quad.axis)
    xi = _cos_to_mu(scheme, mu)
    sin_xi = np.sqrt(np.clip(1.0 - xi * xi, 0.0, 1.0))
    proj = np.outer(sin_xi, perp) + np.outer(xi, t)       # (K, M)
    u = scheme.bvalues * cfg.d_par
    return np.exp(-u[:, None] * proj * proj) @ masses


def aec_signal(scheme, mu, kappa: float, v_ic: float,
               cfg: DiffusivityConfig | None = None,
               quad: SphereQuadrature | None = None,
               tau1: float | None = None) -> np.ndarray:
    """Extra-cellular (hindered Gaussian) signal per gradient.

    Uses the Watson-averaged cylindrical tensor

        D' = (d_par - d_perp) * (tau1 * mu mu^T
             + (1 - tau1)/2 * (I - mu mu^T)) + d_perp * I

    with tortuosity ``d_perp = d_par * (1 - v_ic)``.  ``tau1`` may be
    supplied to reuse a precomputed Watson second moment.
    """
    cfg = cfg or DiffusivityConfig()
    if quad is None:
        quad = default_quadrature()
    if not 0.0 <= v_ic <= 1.0:
        raise SignalModelError("v_ic must lie in [0, 1]")
    if tau1 is None:
        tau1 = watson_tau1(kappa, quad)
    xi2 = np.square(_cos_to_mu(scheme, mu))
    d_perp = cfg.d_par * (1.0 - v_ic)
    delta = cfg.d_par - d_perp
    gdg = delta * (tau1 * xi2 + 0.5 * (1.0 - tau1) * (1.0 - xi2)) + d_perp
    return np.exp(-scheme.bvalues * gdg)


def aiso_signal(scheme, cfg: DiffusivityConfig | None = None) -> np.ndarray:
    """Isotropic free-water signal ``exp(-b * d_iso)`` per gradient."""
    cfg = cfg or DiffusivityConfig()
    return np.exp(-scheme.bvalues * cfg.d_iso)


def synthesize(scheme, params: TissueParams,
               cfg: DiffusivityConfig | None = None,
               quad: SphereQuadrature | None = None) -> np.ndarray:
    """Noiseless normalized signal vector for one voxel."""
    cfg = cfg or DiffusivityConfig()
    if quad is None:
        quad = default_quadrature()
    a_ic = aic_signal(scheme, params.mu, params.kappa, cfg, quad)
    a_ec = aec_signal(scheme, params.mu, params.kappa, params.v_ic, cfg, quad)
    a_iso = aiso_signal(scheme, cfg)
    tissue = params.v_ic * a_ic + (1.0 - params.v_ic) * a_ec
    return (1.0 - params.v_iso) * tissue + params.v_iso * a_iso
