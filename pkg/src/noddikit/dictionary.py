"""Response dictionaries over discretized tissue parameters.

Each anisotropic atom is a coupled intra+extra-cellular signal evaluated
at one (v_ic, kappa) pair from a fixed grid; a single isotropic atom sits
in the last column.  Columns are ordered v_ic-major / kappa-minor with
the isotropic atom last, so "last entry = free water" holds everywhere
downstream.

The expanded variant concatenates one anisotropic block per orientation
of a basis set, which removes the need to rebuild the dictionary per
voxel orientation.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .quadrature import SphereQuadrature, default_quadrature
from .signal import (
    DiffusivityConfig,
    aec_signal,
    aic_signal_table,
    aiso_signal,
    kappa_from_od,
    watson_tau1_table,
)


class DictionaryError(ValueError):
    """Raised for invalid grids, orientation sets or dictionary files."""


@dataclass(frozen=True)
class ParamGrid:
    """Discretized (v_ic, kappa) values the atoms are drawn from."""

    vic_values: np.ndarray
    kappa_values: np.ndarray

    def __post_init__(self):
        vic = np.array(self.vic_values, dtype=float)
        kap = np.array(self.kappa_values, dtype=float)
        for name, arr in (("vic_values", vic), ("kappa_values", kap)):
            if arr.ndim != 1 or arr.size < 1:
                raise DictionaryError(f"{name} must be a nonempty vector")
            if np.any(np.diff(arr) <= 0):
                raise DictionaryError(f"{name} must be strictly increasing")
        if np.any(vic <= 0) or np.any(vic >= 1):
            raise DictionaryError("vic_values must lie in (0, 1)")
        if np.any(kap <= 0):
            raise DictionaryError("kappa_values must be positive")
        vic.setflags(write=False)
        kap.setflags(write=False)
        object.__setattr__(self, "vic_values", vic)
        object.__setattr__(self, "kappa_values", kap)

    @property
    def n_atoms(self) -> int:
        return self.vic_values.size * self.kappa_values.size


def default_grid() -> ParamGrid:
    """12 x 12 grid: v_ic linear in [0.1, 0.99], kappa from an OD-linear
    grid on [0.03, 0.95] (sorted ascending in kappa)."""
    vic = np.linspace(0.1, 0.99, 12)
    od = np.linspace(0.03, 0.95, 12)
    kappa = np.sort(kappa_from_od(od))
    return ParamGrid(vic, kappa)


@dataclass(frozen=True)
class OrientationSet:
    """Basis orientations for the expanded dictionary."""

    orientations: np.ndarray  # (n, 3) unit vectors

    def __post_init__(self):
        ors = np.array(self.orientations, dtype=float)
        if ors.ndim != 2 or ors.shape[1] != 3 or ors.shape[0] < 1:
            raise DictionaryError("orientations must be a nonempty (n, 3) array")
        norms = np.linalg.norm(ors, axis=1)
        if np.max(np.abs(norms - 1.0)) > 1e-6:
            raise DictionaryError("orientations must be unit vectors")
        dots = np.abs(ors @ ors.T)
        np.fill_diagonal(dots, 0.0)
        if ors.shape[0] > 1 and np.max(dots) > 1.0 - 1e-9:
            raise DictionaryError("orientations must be distinct up to sign")
        ors.setflags(write=False)
        object.__setattr__(self, "orientations", ors)

    def __len__(self) -> int:
        return self.orientations.shape[0]


@dataclass(frozen=True)
class Dictionary:
    """Response matrix plus per-column atom metadata.

    ``matrix`` is K x width where width = n_orientations * N_a + 1; the
    final column is the isotropic atom.  ``vic_atoms`` / ``kappa_atoms``
    / ``orient_atoms`` describe the anisotropic columns in order.
    """

    matrix: np.ndarray
    vic_atoms: np.ndarray
    kappa_atoms: np.ndarray
    orient_atoms: np.ndarray        # orientation index per anisotropic column
    orientations: np.ndarray        # (n_orientations, 3)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] < 2:
            raise DictionaryError("matrix must be K x (N_a + 1)")
        n_aniso = m.shape[1] - 1
        if not (self.vic_atoms.shape == self.kappa_atoms.shape
                == self.orient_atoms.shape == (n_aniso,)):
            raise DictionaryError("atom metadata must cover the anisotropic columns")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def K(self) -> int:
        return self.matrix.shape[0]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_aniso(self) -> int:
        return self.width - 1

    @property
    def mu(self) -> np.ndarray:
        """Mean orientation of a single-orientation dictionary."""
        if self.orientations.shape[0] != 1:
            raise DictionaryError("dictionary has multiple orientations")
        return self.orientations[0]


def _anisotropic_block(scheme, mu, grid: ParamGrid, cfg, quad) -> np.ndarray:
    """K x N_a block of coupled atoms, v_ic-major / kappa-minor order."""
    # one quadrature sweep covers every kappa in the grid
    aic_tab = aic_signal_table(scheme, mu, grid.kappa_values, cfg, quad)
    tau1_tab = watson_tau1_table(grid.kappa_values, quad)
    cols = []
    for vic in grid.vic_values:
        for j, kappa in enumerate(grid.kappa_values):
            a_ec = aec_signal(scheme, mu, kappa, vic, cfg, quad,
                              tau1=tau1_tab[j])
            cols.append(vic * aic_tab[:, j] + (1.0 - vic) * a_ec)
    return np.column_stack(cols)


def build_dictionary(scheme, mu, grid: ParamGrid | None = None,
                     cfg: DiffusivityConfig | None = None,
                     quad: SphereQuadrature | None = None) -> Dictionary:
    """Dictionary for one mean orientation: N_a coupled atoms + 1 isotropic."""
    grid = grid or default_grid()
    cfg = cfg or DiffusivityConfig()
    quad = quad or default_quadrature()
    mu = np.asarray(mu, dtype=float)
    block = _anisotropic_block(scheme, mu, grid, cfg, quad)
    matrix = np.column_stack([block, aiso_signal(scheme, cfg)])
    n_kappa = grid.kappa_values.size
    vic_atoms = np.repeat(grid.vic_values, n_kappa)
    kappa_atoms = np.tile(grid.kappa_values, grid.vic_values.size)
    return Dictionary(
        matrix=matrix,
        vic_atoms=vic_atoms,
        kappa_atoms=kappa_atoms,
        orient_atoms=np.zeros(vic_atoms.size, dtype=int),
        orientations=(mu / np.linalg.norm(mu)).reshape(1, 3),
    )


def build_expanded_dictionary(scheme, orientations: OrientationSet,
                              grid: ParamGrid | None = None,
                              cfg: DiffusivityConfig | None = None,
                              quad: SphereQuadrature | None = None) -> Dictionary:
    """Orientation-expanded dictionary ``[block(u_1) | ... | block(u_n) | iso]``."""
    grid = grid or default_grid()
    cfg = cfg or DiffusivityConfig()
    quad = quad or default_quadrature()
    if len(orientations) < 1:
        raise DictionaryError("orientation set is empty")
    blocks = [
        _anisotropic_block(scheme, u, grid, cfg, quad)
        for u in orientations.orientations
    ]
    matrix = np.column_stack(blocks + [aiso_signal(scheme, cfg)])
    n_kappa = grid.kappa_values.size
    n_a = grid.n_atoms
    vic_atoms = np.tile(np.repeat(grid.vic_values, n_kappa), len(orientations))
    kappa_atoms = np.tile(grid.kappa_values, grid.vic_values.size * len(orientations))
    orient_atoms = np.repeat(np.arange(len(orientations)), n_a)
    return Dictionary(
        matrix=matrix,
        vic_atoms=vic_atoms,
        kappa_atoms=kappa_atoms,
        orient_atoms=orient_atoms,
        orientations=np.array(orientations.orientations),
    )


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_MAGIC = b"MDN1"


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Little-endian binary: magic, K and width as uint32, row-major
    float64 matrix, then a text trailer with per-atom metadata."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", dictionary.K, dictionary.width))
        fh.write(dictionary.matrix.astype("<f8").tobytes(order="C"))
        trailer = io.StringIO()
        for u in dictionary.orientations:
            trailer.write(f"orientation {u[0]:.17g} {u[1]:.17g} {u[2]:.17g}\n")
        for j in range(dictionary.n_aniso):
            trailer.write(
                f"atom {j} {dictionary.orient_atoms[j]} "
                f"{dictionary.vic_atoms[j]:.17g} {dictionary.kappa_atoms[j]:.17g}\n"
            )
        trailer.write("atom_iso\n")
        fh.write(trailer.getvalue().encode())


def load_dictionary(path) -> Dictionary:
    """Read a dictionary written by :func:`save_dictionary`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise DictionaryError(f"bad dictionary magic {magic!r}")
        k, width = struct.unpack("<II", fh.read(8))
        payload = fh.read(8 * k * width)
        if len(payload) != 8 * k * width:
            raise DictionaryError("truncated dictionary payload")
        matrix = np.frombuffer(payload, dtype="<f8").reshape(k, width).copy()
        orientations, orient_idx, vic, kappa = [], [], [], []
        for line in fh.read().decode().splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "orientation":
                orientations.append([float(p) for p in parts[1:4]])
            elif parts[0] == "atom":
                orient_idx.append(int(parts[2]))
                vic.append(float(parts[3]))
                kappa.append(float(parts[4]))
    if len(vic) != width - 1:
        raise DictionaryError("atom metadata does not match matrix width")
    return Dictionary(
        matrix=matrix,
        vic_atoms=np.asarray(vic),
        kappa_atoms=np.asarray(kappa),
        orient_atoms=np.asarray(orient_idx, dtype=int),
        orientations=np.asarray(orientations),
    )


def export_csv(dictionary: Dictionary, path) -> None:
    """Inspection-friendly CSV: one header row of atom labels, then the
    matrix row per gradient."""
    labels = [
        f"aniso_o{o}_vic{v:.4g}_k{k:.4g}"
        for o, v, k in zip(dictionary.orient_atoms, dictionary.vic_atoms,
                           dictionary.kappa_atoms)
    ] + ["iso"]
    with open(path, "w") as fh:
        fh.write(",".join(labels) + "\n")
        for row in dictionary.matrix:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
