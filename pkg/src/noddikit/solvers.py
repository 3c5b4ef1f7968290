"""Classic sparse solvers: iterative hard thresholding and regularized NNLS.

Both solvers operate on a dictionary matrix (a ``Dictionary`` or a plain
K x N array) and a length-K signal.  IHT implements

    f^{t+1} = h_lambda(W y + S f^t),   W = Phi^T,  S = I - Phi^T Phi,

which contracts only when ||Phi||_2 <= 1, so the solve runs on a rescaled
system: both Phi and y are multiplied by the same factor (1/sigma_max by
default), leaving the iterates in original coefficient units and keeping
every nonzero output entry >= lambda.

The NNLS solver minimizes

    F(f) = 1/2 ||Phi f - y||^2 + alpha/2 ||f||^2 + beta * sum(f),  f >= 0,

by projected gradient descent with Barzilai-Borwein steps and a monotone
backtracking safeguard; convergence is declared on the projected-gradient
(KKT) residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class SolverError(ValueError):
    """Raised for dimension mismatches and invalid solver parameters."""


@dataclass(frozen=True)
class MixtureFractions:
    """Nonnegative atom coefficients; the last entry is the isotropic one."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise SolverError("fractions must be a nonempty vector")
        if np.any(v < 0):
            raise SolverError("fractions must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def aniso(self) -> np.ndarray:
        """All but the last entry (anisotropic atoms)."""
        return self.values[:-1]

    @property
    def iso(self) -> float:
        """Last entry (isotropic atom)."""
        return float(self.values[-1])


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    final_objective: float
    converged: bool
    # objective after every accepted iterate, starting at f = 0
    objectives: np.ndarray = field(default=None, repr=False)


def _as_matrix(dictionary) -> np.ndarray:
    phi = getattr(dictionary, "matrix", dictionary)
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2:
        raise SolverError("dictionary must be a 2-d matrix")
    return phi


def hard_threshold(a, lam: float) -> np.ndarray:
    """Keep entries >= lam, zero the rest (negatives are below lam).

    Idempotent, and its image is exactly the set of vectors whose nonzero
    entries are >= lam.
    """
    if lam <= 0:
        raise SolverError("threshold must be positive")
    a = np.asarray(a, dtype=float)
    return np.where(a >= lam, a, 0.0)


def spectral_norm(matrix, tol: float = 1e-10, max_iter: int = 10000) -> float:
    """Largest singular value via power iteration on the Gram matrix.

    Starts from the all-ones vector; stops when the Rayleigh quotient
    changes by less than ``tol`` (relative to max(1, estimate)).
    """
    phi = _as_matrix(matrix)
    gram = phi.T @ phi
    v = np.ones(gram.shape[0])
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ (gram @ v))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


def iht_solve(dictionary, y, lam: float = 0.01, max_iter: int = 500,
              scale: float | None = None,
              tol: float = 1e-10) -> tuple[MixtureFractions, SolverReport]:
    """Iterative hard thresholding from f = 0 on the rescaled system.

    Parameters
    ----------
    dictionary : Dictionary or (K, N) ndarray
    y : (K,) ndarray
    lam : float
        Threshold; nonzero entries of the solution are >= lam.
    max_iter : int
        Iteration cap.
    scale : float, optional
        Multiplier applied to both the dictionary and the signal.  Must
        make the scaled dictionary's spectral norm <= 1; by default
        1/sigma_max from power iteration.
    tol : float
        Stop when successive iterates differ by less than this in max
        norm.

    Returns
    -------
    fractions : MixtureFractions
    report : SolverReport
        ``final_objective`` is 1/2 ||Phi f - y||^2 in original units.
    """
    phi = _as_matrix(dictionary)
    y = np.asarray(y, dtype=float)
    if y.shape != (phi.shape[0],):
        raise SolverError(
            f"signal length {y.shape} does not match dictionary rows {phi.shape[0]}")
    if scale is None:
        sigma = spectral_norm(phi)
        scale = 1.0 / sigma if sigma > 0 else 1.0
    phi_s = scale * phi
    wy = phi_s.T @ (scale * y)
    s_mat = np.eye(phi.shape[1]) - phi_s.T @ phi_s
    f = np.zeros(phi.shape[1])
    iterations = 0
    converged = False
    for iterations in range(1, max_iter + 1):
        f_new = hard_threshold(wy + s_mat @ f, lam)
        delta = np.max(np.abs(f_new - f))
        f = f_new
        if delta < tol:
            converged = True
            break
    resid = phi @ f - y
    report = SolverReport(iterations=iterations,
                          final_objective=0.5 * float(resid @ resid),
                          converged=converged)
    return MixtureFractions(f), report


def nnls_regularized(dictionary, y, alpha: float = 0.0, beta: float = 0.0,
                     max_iter: int = 2000,
                     kkt_tol: float = 1e-8) -> tuple[MixtureFractions, SolverReport]:
    """Nonnegative least squares with optional l2 and l1 penalties.

    Minimizes F(f) = 1/2 ||Phi f - y||^2 + alpha/2 ||f||^2 + beta sum(f)
    over f >= 0.  Projected gradient with Barzilai-Borwein steps (the
    two BB step lengths alternate, which copes far better with the
    near-collinear atoms of response dictionaries); each step is
    backtracked until the objective does not increase, so the recorded
    objective sequence is non-increasing.  Converges when the
    projected-gradient max norm drops below ``kkt_tol``.

    Returns
    -------
    fractions : MixtureFractions
    report : SolverReport
        ``objectives`` holds F after every accepted iterate (index 0 is
        the starting point f = 0).
    """
    phi = _as_matrix(dictionary)
    y = np.asarray(y, dtype=float)
    if y.shape != (phi.shape[0],):
        raise SolverError(
            f"signal length {y.shape} does not match dictionary rows {phi.shape[0]}")
    if alpha < 0 or beta < 0:
        raise SolverError("alpha and beta must be nonnegative")
    gram = phi.T @ phi
    atb = phi.T @ y
    const = 0.5 * float(y @ y)
    n = phi.shape[1]

    def objective(f, gf):
        return 0.5 * float(f @ gf) - float(atb @ f) + const \
            + 0.5 * alpha * float(f @ f) + beta * float(np.sum(f))

    def gradient(f, gf):
        return gf - atb + alpha * f + beta

    f = np.zeros(n)
    gf = gram @ f
    obj = objective(f, gf)
    grad = gradient(f, gf)
    objectives = [obj]
    # row-sum bound on lambda_max(G) + alpha gives a safe first step
    lipschitz = float(np.max(np.sum(np.abs(gram), axis=1))) + alpha
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0
    iterations = 0
    converged = _kkt_residual(f, grad) < kkt_tol
    while not converged and iterations < max_iter:
        iterations += 1
        t = step
        accepted = False
        for _ in range(60):
            f_new = np.maximum(f - t * grad, 0.0)
            d = f_new - f
            if not np.any(d):
                break
            gf_new = gram @ f_new
            obj_new = objective(f_new, gf_new)
            # monotone Armijo: sufficient decrease and no float-level increase
            if obj_new <= obj + 1e-4 * float(grad @ d) and obj_new <= obj:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # stationary to floating-point precision
        grad_new = gradient(f_new, gf_new)
        s = f_new - f
        dg = grad_new - grad
        sdg = float(s @ dg)
        if sdg > 1e-300:
            step = float(s @ s) / sdg if iterations % 2 else sdg / float(dg @ dg)
        else:
            step = 1.0 / lipschitz
        f, gf, obj, grad = f_new, gf_new, obj_new, grad_new
        objectives.append(obj)
        converged = _kkt_residual(f, grad) < kkt_tol
    report = SolverReport(iterations=iterations, final_objective=obj,
                          converged=bool(converged),
                          objectives=np.asarray(objectives))
    return MixtureFractions(f), report


def _kkt_residual(f, grad) -> float:
    """Projected-gradient max norm: grad on the support, its negative
    part where f sits on the boundary."""
    r = np.where(f > 0, grad, np.minimum(grad, 0.0))
    return float(np.max(np.abs(r))) if r.size else 0.0
