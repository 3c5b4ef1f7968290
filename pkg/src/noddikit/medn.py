"""Two-stage unrolled estimation network with hand-rolled training.

Stage one unrolls T iterations of hard-thresholded sparse coding with
learned matrices,

    f^t = h_lambda(W y + S f^(t-1)),   f^0 = 0,   S shared across layers,

so the stage-one output plays the role of dictionary mixture fractions.
Stage two reads the microstructure off f^T: the free-water fraction is
the last entry, the remaining entries are floored by tau and normalized
to a probability vector, and a learned nonnegative 2 x (N-1) matrix H
maps that vector to (v_ic, kappa); od follows from kappa.

Gradients of the joint MSE loss with respect to W, S and H are derived
by hand (see ``backward``); training uses Adam with H projected to be
nonnegative after every step.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .amico import Microstructure
from .dictionary import (
    Dictionary,
    OrientationSet,
    ParamGrid,
    build_expanded_dictionary,
)
from .optim import (
    TrainConfig,
    TrainHistory,
    adam_step as _adam_step_params,
    run_training,
)
from .quadrature import SphereQuadrature
from .scheme import electrostatic_directions
from .signal import DiffusivityConfig, kappa_from_od, od_from_kappa
from .solvers import spectral_norm

DEFAULT_LAMBDA = 0.01
DEFAULT_TAU = 1e-10
DEFAULT_LAYERS = 8
DEFAULT_WIDTH = 301


class MednError(ValueError):
    """Raised for invalid network weights or inputs."""


@dataclass(frozen=True)
class MednWeights:
    """Learned parameters of the network.

    ``W`` is N x K, ``S`` is N x N (shared across layers), ``H`` is the
    nonnegative 2 x (N-1) stage-two readout.  ``lam`` is the threshold,
    ``tau`` the normalization floor, ``layers`` the unroll depth T.
    """

    W: np.ndarray
    S: np.ndarray
    H: np.ndarray
    lam: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU
    layers: int = DEFAULT_LAYERS

    def __post_init__(self):
        w = np.array(self.W, dtype=float)
        s = np.array(self.S, dtype=float)
        h = np.array(self.H, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2:
            raise MednError("W must be N x K with N >= 2")
        n = w.shape[0]
        if s.shape != (n, n):
            raise MednError("S must be N x N")
        if h.shape != (2, n - 1):
            raise MednError("H must be 2 x (N - 1)")
        if np.any(h < 0):
            raise MednError("H must be nonnegative")
        if not (self.lam > 0 and self.tau > 0):
            raise MednError("lambda and tau must be positive")
        if self.layers < 1:
            raise MednError("layers must be >= 1")
        for arr, name in ((w, "W"), (s, "S"), (h, "H")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def as_params(self) -> dict:
        return {"W": self.W, "S": self.S, "H": self.H}

    def with_params(self, params: dict) -> "MednWeights":
        return replace(self, W=params["W"], S=params["S"], H=params["H"])


@dataclass(frozen=True)
class ForwardTrace:
    """Everything backward needs: inputs, per-layer pre-activations and
    activations, the normalized stage-two vector and raw outputs."""

    signals: np.ndarray          # (B, K)
    pres: tuple                  # T arrays (B, N)
    acts: tuple                  # T arrays (B, N), f^1..f^T
    fa_norm: np.ndarray          # (B, N-1), the probability vector
    norm_sums: np.ndarray        # (B,), l1 norms before division
    v_ic: np.ndarray             # (B,) raw
    v_iso: np.ndarray            # (B,) raw
    kappa: np.ndarray            # (B,)
    od: np.ndarray               # (B,) raw


def init_weights(K: int, N: int = DEFAULT_WIDTH, seed: int = 0,
                 mode: str = "random", dictionary: Dictionary | None = None,
                 lam: float = DEFAULT_LAMBDA, tau: float = DEFAULT_TAU,
                 layers: int = DEFAULT_LAYERS) -> MednWeights:
    """Seeded initial weights.

    ``random`` draws W and S uniformly from [-1/sqrt(K), 1/sqrt(K)] and
    [-1/sqrt(N), 1/sqrt(N)] and H from [0, 1].  ``dictionary`` mimics
    classic thresholded sparse coding: W = Phi~^T and S = I - Phi~^T
    Phi~ for the spectrally scaled dictionary Phi~, with H's rows taken
    from the anisotropic atoms' (v_ic, kappa) so stage two starts as the
    atom-averaging readout.
    """
    if N < 2:
        raise MednError("N must be >= 2")
    if mode == "random":
        rng = np.random.default_rng(seed)
        w = rng.uniform(-1.0, 1.0, size=(N, K)) / np.sqrt(K)
        s = rng.uniform(-1.0, 1.0, size=(N, N)) / np.sqrt(N)
        h = rng.uniform(0.0, 1.0, size=(2, N - 1))
    elif mode == "dictionary":
        if dictionary is None:
            raise MednError("dictionary mode requires a dictionary")
        if dictionary.width != N:
            raise MednError(
                f"dictionary width {dictionary.width} does not match N={N}")
        if dictionary.K != K:
            raise MednError(
                f"dictionary rows {dictionary.K} do not match K={K}")
        sigma = spectral_norm(dictionary.matrix)
        phi = dictionary.matrix / sigma if sigma > 0 else dictionary.matrix
        w = phi.T
        s = np.eye(N) - phi.T @ phi
        h = np.vstack([dictionary.vic_atoms, dictionary.kappa_atoms])
    else:
        raise MednError(f"unknown init mode {mode!r}")
    return MednWeights(W=w, S=s, H=h, lam=lam, tau=tau, layers=layers)


def default_init_dictionary(scheme, n_orientations: int = 12,
                            n_vic: int = 5, n_od: int = 5, seed: int = 0,
                            cfg: DiffusivityConfig | None = None,
                            quad: SphereQuadrature | None = None) -> Dictionary:
    """Expanded dictionary whose width matches the default N = 301.

    300 anisotropic atoms factor as 12 electrostatically spread
    orientations times a 5 x 5 (v_ic, od) grid over the same parameter
    ranges as the estimation grid, plus the isotropic atom.
    """
    dirs = electrostatic_directions(n_orientations, seed=seed)
    grid = ParamGrid(np.linspace(0.1, 0.99, n_vic),
                     np.sort(kappa_from_od(np.linspace(0.03, 0.95, n_od))))
    return build_expanded_dictionary(scheme, OrientationSet(dirs), grid,
                                     cfg=cfg, quad=quad)


def forward_batch(weights: MednWeights, signals) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network on a (B, K) batch.

    Returns the raw outputs as a (B, 3) array with columns
    (v_ic, v_iso, od) plus the trace for backpropagation.
    """
    y = np.asarray(signals, dtype=float)
    if y.ndim != 2 or y.shape[1] != weights.K:
        raise MednError(f"signals must be (B, {weights.K})")
    z = y @ weights.W.T
    f = np.zeros_like(z)
    pres, acts = [], []
    for _ in range(weights.layers):
        pre = z + f @ weights.S.T
        f = np.where(pre >= weights.lam, pre, 0.0)
        pres.append(pre)
        acts.append(f)
    v_iso = f[:, -1]
    a = f[:, :-1] + weights.tau
    sums = a.sum(axis=1)
    fa = a / sums[:, None]
    head = fa @ weights.H.T
    v_ic = head[:, 0]
    kappa = head[:, 1]
    od = od_from_kappa(kappa)
    outputs = np.column_stack([v_ic, v_iso, od])
    trace = ForwardTrace(signals=y, pres=tuple(pres), acts=tuple(acts),
                         fa_norm=fa, norm_sums=sums, v_ic=v_ic, v_iso=v_iso,
                         kappa=kappa, od=od)
    return outputs, trace


def _to_microstructure(v_ic: float, v_iso: float, od: float) -> Microstructure:
    clamp = lambda v: float(min(max(v, 0.0), 1.0))
    return Microstructure(v_ic=clamp(v_ic), v_iso=clamp(v_iso), od=clamp(od),
                          raw_v_ic=float(v_ic), raw_v_iso=float(v_iso),
                          raw_od=float(od))


def forward(weights: MednWeights, y) -> tuple[Microstructure, ForwardTrace]:
    """Single-voxel forward pass; outputs clamped, raw values retained."""
    y = np.asarray(y, dtype=float)
    if y.shape != (weights.K,):
        raise MednError(f"signal must have length {weights.K}")
    outputs, trace = forward_batch(weights, y[None, :])
    return _to_microstructure(*outputs[0]), trace


def predict_batch(weights: MednWeights, signals, chunk: int = 4096) -> list:
    """Element-wise forward over (B, K) signals; traces discarded.

    Returns one :class:`Microstructure` per row (clamped values, raw
    retained on the instance).
    """
    y = np.asarray(signals, dtype=float)
    if y.ndim != 2 or y.shape[1] != weights.K:
        raise MednError(f"signals must be (B, {weights.K})")
    out = []
    for start in range(0, y.shape[0], chunk):
        block, _ = forward_batch(weights, y[start:start + chunk])
        out.extend(_to_microstructure(*row) for row in block)
    return out


def _loss_arrays(pred: np.ndarray, target: np.ndarray):
    """Total loss and per-quantity components from raw (B, 3) arrays."""
    d = pred - target
    comps = np.mean(d * d, axis=0)
    return float(comps.sum()), comps


def loss(pred_batch, target_batch) -> float:
    """Sum of per-quantity MSEs over a batch of Microstructures.

    Raw (unclamped) values enter the loss, matching training.
    """
    if len(pred_batch) == 0 or len(pred_batch) != len(target_batch):
        raise MednError("prediction and target batches must be nonempty and equal length")
    as_arr = lambda ms: np.array([[m.raw_v_ic, m.raw_v_iso, m.raw_od] for m in ms])
    total, _ = _loss_arrays(as_arr(pred_batch), as_arr(target_batch))
    return total


def backward(weights: MednWeights, trace: ForwardTrace, targets) -> dict:
    """Hand-derived gradients of the batch loss for W, S and H.

    The thresholding subgradient is 1 on the retention branch
    (pre-activation >= lambda) and 0 below it; the normalization and
    arctan readout are differentiated exactly; the S gradient sums the
    contributions of all T layers.
    """
    targets = np.asarray(targets, dtype=float)
    b, n = trace.pres[0].shape
    if targets.shape != (b, 3):
        raise MednError("targets must be (B, 3)")
    if len(trace.pres) != weights.layers or n != weights.N:
        raise MednError("trace does not match weights")

    douts = 2.0 * (np.column_stack([trace.v_ic, trace.v_iso, trace.od])
                   - targets) / b
    dod = douts[:, 2]
    # od = (2/pi) * arctan(1/kappa)  =>  d od/d kappa = -(2/pi)/(1+kappa^2)
    dkappa = dod * (-(2.0 / np.pi) / (1.0 + trace.kappa ** 2))
    dhead = np.column_stack([douts[:, 0], dkappa])          # (B, 2)
    dh = dhead.T @ trace.fa_norm                            # (2, N-1)
    dfa = dhead @ weights.H                                 # (B, N-1)
    # fa = a / sum(a): da_i = (dfa_i - <dfa, fa>) / sum, per row
    dot = np.sum(dfa * trace.fa_norm, axis=1)
    da = (dfa - dot[:, None]) / trace.norm_sums[:, None]
    df = np.zeros((b, n))
    df[:, :-1] = da
    df[:, -1] += douts[:, 1]

    dz = np.zeros((b, n))
    ds = np.zeros((n, n))
    for t in range(weights.layers - 1, -1, -1):
        dpre = np.where(trace.pres[t] >= weights.lam, df, 0.0)
        dz += dpre
        f_prev = trace.acts[t - 1] if t > 0 else np.zeros((b, n))
        ds += dpre.T @ f_prev
        df = dpre @ weights.S
    dw = dz.T @ trace.signals
    return {"W": dw, "S": ds, "H": dh}


def adam_step(weights: MednWeights, grads: dict, state,
              config: TrainConfig) -> MednWeights:
    """One Adam update on (W, S, H) followed by the H >= 0 projection."""
    params = _adam_step_params(weights.as_params(), grads, state, config)
    params["H"] = np.maximum(params["H"], 0.0)
    return weights.with_params(params)


def train(signals, targets, config: TrainConfig | None = None,
          weights: MednWeights | None = None) -> tuple[MednWeights, TrainHistory]:
    """Mini-batch Adam training of the network.

    ``signals`` is (n, K), ``targets`` (n, 3) with columns
    (v_ic, v_iso, od).  ``weights`` sets the starting point; by default
    seeded-random initialization at the standard width.  Returns the
    best-validation weights (per config) and the loss history.
    """
    config = config or TrainConfig()
    signals = np.asarray(signals, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if signals.ndim != 2 or targets.shape != (signals.shape[0], 3):
        raise MednError("signals must be (n, K) and targets (n, 3)")
    if weights is None:
        weights = init_weights(signals.shape[1], seed=config.seed)
    base = weights

    def batch_grad(params, idx):
        w = base.with_params(params)
        _, trace = forward_batch(w, signals[idx])
        return backward(w, trace, targets[idx])

    def eval_loss(params, idx, chunk=8192):
        w = base.with_params(params)
        sse = np.zeros(3)
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            out, _ = forward_batch(w, signals[sel])
            d = out - targets[sel]
            sse += np.sum(d * d, axis=0)
        comps = sse / idx.size
        return float(comps.sum()), comps

    def project(params):
        params["H"] = np.maximum(params["H"], 0.0)
        return params

    best, history = run_training(base.as_params(), signals.shape[0],
                                 batch_grad, eval_loss, config, project)
    return base.with_params(best), history


# --------------------------------------------------------------------------
# weight serialization
# --------------------------------------------------------------------------

_MAGIC = b"MDNW"
_VERSION = 1


def _payload(weights: MednWeights) -> bytes:
    head = struct.pack("<iiii", _VERSION, weights.K, weights.N, weights.layers)
    head += struct.pack("<dd", weights.lam, weights.tau)
    body = (weights.W.astype("<f8").tobytes(order="C")
            + weights.S.astype("<f8").tobytes(order="C")
            + weights.H.astype("<f8").tobytes(order="C"))
    return head + body


def save_weights(weights: MednWeights, path) -> None:
    """Little-endian binary dump with a trailing 64-bit checksum."""
    payload = _payload(weights)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(payload)
        fh.write(digest)


def load_weights(path) -> MednWeights:
    """Read weights written by :func:`save_weights`, verifying the
    magic, checksum and version."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise MednError(f"bad weights magic {blob[:4]!r}")
    payload, digest = blob[4:-8], blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise MednError("weights checksum mismatch")
    version, k, n, layers = struct.unpack_from("<iiii", payload, 0)
    if version != _VERSION:
        raise MednError(f"unsupported weights version {version}")
    lam, tau = struct.unpack_from("<dd", payload, 16)
    offset = 32
    expect = 8 * (n * k + n * n + 2 * (n - 1))
    if len(payload) - offset != expect:
        raise MednError("weights payload has wrong size")
    w = np.frombuffer(payload, dtype="<f8", count=n * k, offset=offset)
    offset += 8 * n * k
    s = np.frombuffer(payload, dtype="<f8", count=n * n, offset=offset)
    offset += 8 * n * n
    h = np.frombuffer(payload, dtype="<f8", count=2 * (n - 1), offset=offset)
    return MednWeights(W=w.reshape(n, k).copy(), S=s.reshape(n, n).copy(),
                       H=h.reshape(2, n - 1).copy(), lam=lam, tau=tau,
                       layers=layers)
