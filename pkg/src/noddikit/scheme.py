"""Acquisition schemes: gradient direction tables with b-values.

A scheme is the list of diffusion gradients the signals live on.  The
on-disk format is plain text, one gradient per line::

    gx gy gz b

with b in s/mm^2 and lines starting with ``#`` ignored.

Two protocols ship with the package as fixture files so that every test
and benchmark sees exactly the same directions:

* ``two_shell_60``: one b=0 measurement, then 30 directions at b=1000
  plus 30 at b=2000.
* ``dense_three_shell_90``: the same 61 rows followed by 30 more at
  b=3000, used to compute gold standards; the two-shell protocol is its
  leading subset.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np


class SchemeError(ValueError):
    """Raised for malformed schemes or scheme files."""


@dataclass(frozen=True)
class AcquisitionScheme:
    """Ordered diffusion gradients: unit directions plus b-values.

    Attributes
    ----------
    directions : ndarray, shape (K, 3)
        Unit gradient directions.
    bvalues : ndarray, shape (K,)
        Diffusion weightings in s/mm^2, all >= 0.
    """

    directions: np.ndarray
    bvalues: np.ndarray

    def __post_init__(self):
        directions = np.array(self.directions, dtype=float)
        bvalues = np.array(self.bvalues, dtype=float)
        if directions.ndim != 2 or directions.shape[1] != 3:
            raise SchemeError(f"directions must be (K, 3), got {directions.shape}")
        if bvalues.shape != (directions.shape[0],):
            raise SchemeError("bvalues must match direction count")
        if directions.shape[0] < 1:
            raise SchemeError("scheme needs at least one gradient")
        norms = np.linalg.norm(directions, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise SchemeError("gradient directions must be unit vectors (1e-6)")
        if np.any(bvalues < 0):
            raise SchemeError("b-values must be nonnegative")
        directions.setflags(write=False)
        bvalues.setflags(write=False)
        object.__setattr__(self, "directions", directions)
        object.__setattr__(self, "bvalues", bvalues)

    @property
    def K(self) -> int:
        return self.directions.shape[0]

    def shells(self) -> np.ndarray:
        """Distinct positive b-values, ascending."""
        b = self.bvalues
        return np.unique(b[b > 0])

    def subsample(self, indices) -> "AcquisitionScheme":
        """Scheme restricted to ``indices`` in the given order."""
        idx = _check_indices(indices, self.K)
        return AcquisitionScheme(self.directions[idx], self.bvalues[idx])


def _check_indices(indices, n: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=int)
    if idx.ndim != 1:
        raise SchemeError("indices must be one-dimensional")
    if idx.size == 0:
        raise SchemeError("index list is empty")
    if np.any(idx < 0) or np.any(idx >= n):
        raise SchemeError(f"index out of range for K={n}")
    if np.unique(idx).size != idx.size:
        raise SchemeError("indices must be distinct")
    return idx


def load_scheme(path) -> AcquisitionScheme:
    """Read a scheme file (``gx gy gz b`` per line, ``#`` comments)."""
    path = Path(path)
    if not path.exists():
        raise SchemeError(f"scheme file not found: {path}")
    return parse_scheme(path.read_text())


def parse_scheme(text: str) -> AcquisitionScheme:
    """Parse scheme text (``gx gy gz b`` per line); raises SchemeError."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise SchemeError(f"scheme line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise SchemeError(f"scheme line {lineno}: {exc}") from None
    if not rows:
        raise SchemeError("scheme file contains no gradients")
    arr = np.asarray(rows)
    return AcquisitionScheme(arr[:, :3], arr[:, 3])


def save_scheme(scheme: AcquisitionScheme, path) -> None:
    """Write ``scheme`` in the text format read by :func:`load_scheme`."""
    with open(path, "w") as fh:
        fh.write(format_scheme(scheme))


def format_scheme(scheme: AcquisitionScheme) -> str:
    """Render ``scheme`` as ``gx gy gz b`` lines (full precision)."""
    lines = []
    for g, b in zip(scheme.directions, scheme.bvalues):
        lines.append(f"{g[0]:.17g} {g[1]:.17g} {g[2]:.17g} {b:.17g}")
    return "\n".join(lines) + "\n"


def electrostatic_directions(n: int, seed: int = 0, iterations: int = 2000) -> np.ndarray:
    """Approximately even directions via antipodal electrostatic repulsion.

    Minimizes sum_{i<j} 1/|d_i - d_j|^2 + 1/|d_i + d_j|^2 by projected
    gradient descent from a seeded random start.  Deterministic for a
    given (n, seed, iterations).
    """
    if n < 1:
        raise SchemeError("need at least one direction")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    if n == 1:
        return d
    step = 0.05
    for it in range(iterations):
        force = np.zeros_like(d)
        for sign in (+1.0, -1.0):
            diff = d[:, None, :] - sign * d[None, :, :]        # (n, n, 3)
            dist2 = np.sum(diff * diff, axis=-1)
            np.fill_diagonal(dist2, np.inf)
            dist2[dist2 < 1e-12] = np.inf  # coincident/antipodal pairs
            force += np.sum(diff / dist2[..., None] ** 2, axis=1)
        # move along the tangential component only
        force -= d * np.sum(force * d, axis=1, keepdims=True)
        d += step * force / max(1.0, np.max(np.linalg.norm(force, axis=1)))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        if it == iterations * 3 // 4:
            step *= 0.2
    return d


_DATA_PACKAGE = "noddikit.schemes"


def _builtin(name: str) -> AcquisitionScheme:
    text = resources.files(_DATA_PACKAGE).joinpath(name).read_text()
    return parse_scheme(text)


def two_shell_60() -> AcquisitionScheme:
    """The default protocol: one b=0 row plus 30 directions each at
    b=1000 and b=2000 (61 measurements)."""
    return _builtin("two_shell_60.txt")


def dense_three_shell_90() -> AcquisitionScheme:
    """Dense protocol for gold standards; its first 61 rows equal
    two_shell_60, followed by 30 directions at b=3000."""
    return _builtin("dense_three_shell_90.txt")


BUILTIN_SCHEMES = {
    "two_shell_60": two_shell_60,
    "dense_three_shell_90": dense_three_shell_90,
}


def resolve_scheme(name_or_path) -> AcquisitionScheme:
    """Look up a builtin scheme by name, else load from a file path."""
    key = str(name_or_path)
    if key in BUILTIN_SCHEMES:
        return BUILTIN_SCHEMES[key]()
    return load_scheme(name_or_path)
