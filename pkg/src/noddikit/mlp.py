"""Fully-connected baseline network for microstructure estimation.

A plain multilayer perceptron with three hidden layers of 150 ReLU
units and dropout 0.1 on the hidden activations, trained with the same
loss, optimizer and data-split machinery as the unrolled network.  It
serves as the comparison point for the structured model: same inputs
(normalized signals), same outputs (v_ic, v_iso, od).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, replace

import numpy as np

from .medn import MednError, _loss_arrays, _to_microstructure
from .optim import TrainConfig, TrainHistory, adam_step as _adam_step_params, run_training

DEFAULT_HIDDEN = 150
DEFAULT_DROPOUT = 0.1

_LAYER_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")


@dataclass(frozen=True)
class MlpWeights:
    """Parameters of the K -> 150 -> 150 -> 150 -> 3 network.

    Weight matrices are (out, in); biases are vectors.  ``dropout`` is
    the training-time drop fraction on each hidden activation.
    """

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    W4: np.ndarray
    b4: np.ndarray
    dropout: float = DEFAULT_DROPOUT

    def __post_init__(self):
        arrays = {}
        for name in _LAYER_NAMES:
            arr = np.array(getattr(self, name), dtype=float)
            arrays[name] = arr
        h = arrays["W1"].shape[0]
        if arrays["W1"].ndim != 2:
            raise MednError("W1 must be (hidden, K)")
        shapes = {"b1": (h,), "W2": (h, h), "b2": (h,), "W3": (h, h),
                  "b3": (h,), "W4": (3, h), "b4": (3,)}
        for name, shape in shapes.items():
            if arrays[name].shape != shape:
                raise MednError(f"{name} must have shape {shape}")
        if not 0.0 <= self.dropout < 1.0:
            raise MednError("dropout must be in [0, 1)")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_params(self) -> int:
        return sum(getattr(self, name).size for name in _LAYER_NAMES)

    def as_params(self) -> dict:
        return {name: getattr(self, name) for name in _LAYER_NAMES}

    def with_params(self, params: dict) -> "MlpWeights":
        return replace(self, **{name: params[name] for name in _LAYER_NAMES})


@dataclass(frozen=True)
class MlpTrace:
    """Forward intermediates for backpropagation: pre-activations and
    the (post-dropout) hidden activations, plus the masks used."""

    signals: np.ndarray          # (B, K)
    pres: tuple                  # 3 arrays (B, H)
    hiddens: tuple               # 3 arrays (B, H), after ReLU and dropout
    masks: tuple | None          # None (no dropout) or 3 arrays of 0/1


def init_mlp_weights(K: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0,
                     dropout: float = DEFAULT_DROPOUT) -> MlpWeights:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)

    def glorot(n_out, n_in):
        limit = np.sqrt(6.0 / (n_in + n_out))
        return rng.uniform(-limit, limit, size=(n_out, n_in))

    return MlpWeights(W1=glorot(hidden, K), b1=np.zeros(hidden),
                      W2=glorot(hidden, hidden), b2=np.zeros(hidden),
                      W3=glorot(hidden, hidden), b3=np.zeros(hidden),
                      W4=glorot(3, hidden), b4=np.zeros(3),
                      dropout=dropout)


def dropout_masks(weights: MlpWeights, batch_size: int, rng) -> tuple:
    """Bernoulli keep masks (0/1 floats) for the three hidden layers."""
    keep = 1.0 - weights.dropout
    return tuple(
        (rng.random((batch_size, weights.hidden)) < keep).astype(float)
        for _ in range(3))


def forward_mlp(weights: MlpWeights, signals,
                masks: tuple | None = None) -> tuple[np.ndarray, MlpTrace]:
    """Run the network on a (B, K) batch.

    With ``masks`` given (training), dropout uses inverted scaling:
    kept activations are divided by the keep fraction so prediction
    needs no rescaling.  Without masks dropout is off and the pass is
    deterministic.  Returns raw (B, 3) outputs (v_ic, v_iso, od) and
    the trace.
    """
    y = np.asarray(signals, dtype=float)
    if y.ndim != 2 or y.shape[1] != weights.K:
        raise MednError(f"signals must be (B, {weights.K})")
    keep = 1.0 - weights.dropout
    pres, hiddens = [], []
    h = y
    for i, (w, bias) in enumerate(((weights.W1, weights.b1),
                                   (weights.W2, weights.b2),
                                   (weights.W3, weights.b3))):
        pre = h @ w.T + bias
        h = np.maximum(pre, 0.0)
        if masks is not None:
            h = h * masks[i] / keep
        pres.append(pre)
        hiddens.append(h)
    outputs = h @ weights.W4.T + weights.b4
    trace = MlpTrace(signals=y, pres=tuple(pres), hiddens=tuple(hiddens),
                     masks=masks)
    return outputs, trace


def backward_mlp(weights: MlpWeights, trace: MlpTrace, targets) -> dict:
    """Gradients of the batch loss (sum of per-quantity MSEs).

    Standard backpropagation: the ReLU subgradient is 0 at the kink,
    dropout backpropagates through the same scaled masks used forward.
    """
    targets = np.asarray(targets, dtype=float)
    b = trace.signals.shape[0]
    if targets.shape != (b, 3):
        raise MednError("targets must be (B, 3)")
    keep = 1.0 - weights.dropout
    outputs = trace.hiddens[2] @ weights.W4.T + weights.b4
    dout = 2.0 * (outputs - targets) / b

    grads = {}
    grads["W4"] = dout.T @ trace.hiddens[2]
    grads["b4"] = dout.sum(axis=0)
    dh = dout @ weights.W4
    mats = (weights.W1, weights.W2, weights.W3)
    for i in (2, 1, 0):
        if trace.masks is not None:
            dh = dh * trace.masks[i] / keep
        dpre = np.where(trace.pres[i] > 0.0, dh, 0.0)
        below = trace.signals if i == 0 else trace.hiddens[i - 1]
        grads[f"W{i + 1}"] = dpre.T @ below
        grads[f"b{i + 1}"] = dpre.sum(axis=0)
        dh = dpre @ mats[i]
    return grads


def mlp_baseline_train(signals, targets, config: TrainConfig | None = None,
                       weights: MlpWeights | None = None
                       ) -> tuple[MlpWeights, TrainHistory]:
    """Mini-batch Adam training of the baseline network.

    Same contract as the unrolled network's trainer: (n, K) signals,
    (n, 3) targets, seeded validation split and best-validation
    checkpointing.  Fresh dropout masks are drawn per batch from a
    stream seeded by (config.seed, 1); evaluation runs with dropout
    off.
    """
    config = config or TrainConfig()
    signals = np.asarray(signals, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if signals.ndim != 2 or targets.shape != (signals.shape[0], 3):
        raise MednError("signals must be (n, K) and targets (n, 3)")
    if weights is None:
        weights = init_mlp_weights(signals.shape[1], seed=config.seed)
    base = weights
    mask_rng = np.random.default_rng([config.seed, 1])

    def batch_grad(params, idx):
        w = base.with_params(params)
        masks = (dropout_masks(w, idx.size, mask_rng)
                 if w.dropout > 0 else None)
        _, trace = forward_mlp(w, signals[idx], masks)
        return backward_mlp(w, trace, targets[idx])

    def eval_loss(params, idx, chunk=8192):
        w = base.with_params(params)
        sse = np.zeros(3)
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            out, _ = forward_mlp(w, signals[sel])
            d = out - targets[sel]
            sse += np.sum(d * d, axis=0)
        comps = sse / idx.size
        return float(comps.sum()), comps

    best, history = run_training(base.as_params(), signals.shape[0],
                                 batch_grad, eval_loss, config)
    return base.with_params(best), history


def mlp_baseline_predict(weights: MlpWeights, signals,
                         chunk: int = 4096) -> list:
    """Element-wise prediction with dropout off; repeat calls agree
    bit-exactly.  Returns clamped Microstructures with raw retained."""
    y = np.asarray(signals, dtype=float)
    if y.ndim != 2 or y.shape[1] != weights.K:
        raise MednError(f"signals must be (B, {weights.K})")
    out = []
    for start in range(0, y.shape[0], chunk):
        block, _ = forward_mlp(weights, y[start:start + chunk])
        out.extend(_to_microstructure(*row) for row in block)
    return out


def mlp_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Total loss from raw (B, 3) output and target arrays."""
    return _loss_arrays(np.asarray(pred, float), np.asarray(target, float))[0]


# --------------------------------------------------------------------------
# weight serialization
# --------------------------------------------------------------------------

_MAGIC = b"MLPW"
_VERSION = 1


def _payload(weights: MlpWeights) -> bytes:
    head = struct.pack("<iii", _VERSION, weights.K, weights.hidden)
    head += struct.pack("<d", weights.dropout)
    body = b"".join(getattr(weights, name).astype("<f8").tobytes(order="C")
                    for name in _LAYER_NAMES)
    return head + body


def save_mlp_weights(weights: MlpWeights, path) -> None:
    """Little-endian binary dump with a trailing 64-bit checksum."""
    payload = _payload(weights)
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(payload)
        fh.write(digest)


def load_mlp_weights(path) -> MlpWeights:
    """Read weights written by :func:`save_mlp_weights`, verifying the
    magic, checksum and version."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise MednError(f"bad weights magic {blob[:4]!r}")
    payload, digest = blob[4:-8], blob[-8:]
    if hashlib.blake2b(payload, digest_size=8).digest() != digest:
        raise MednError("weights checksum mismatch")
    version, k, hidden = struct.unpack_from("<iii", payload, 0)
    if version != _VERSION:
        raise MednError(f"unsupported weights version {version}")
    dropout = struct.unpack_from("<d", payload, 12)[0]
    shapes = ((hidden, k), (hidden,), (hidden, hidden), (hidden,),
              (hidden, hidden), (hidden,), (3, hidden), (3,))
    offset = 20
    arrays = {}
    for name, shape in zip(_LAYER_NAMES, shapes):
        count = int(np.prod(shape))
        if offset + 8 * count > len(payload):
            raise MednError("weights payload has wrong size")
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = arr.reshape(shape).copy()
        offset += 8 * count
    if offset != len(payload):
        raise MednError("weights payload has wrong size")
    return MlpWeights(dropout=dropout, **arrays)
