"""Adam optimizer and the shared training loop.

Both the unrolled network and the MLP baseline train through the same
machinery: parameters live in a plain dict of float arrays, gradients
come from a model-supplied batch function, and the loop below owns the
seeded validation split, per-epoch reshuffling, Adam updates and
best-validation checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainError(ValueError):
    """Raised for invalid training configurations or datasets."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for mini-batch Adam training."""

    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 10
    validation_fraction: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # return the final-epoch weights instead of the best-validation ones
    keep_last: bool = False

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise TrainError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainError("batch_size and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise TrainError("learning_rate must be positive")


@dataclass
class TrainHistory:
    """Per-epoch losses; component columns are (v_ic, v_iso, od)."""

    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_components: list = field(default_factory=list)
    val_components: list = field(default_factory=list)
    best_epoch: int = 0


@dataclass
class AdamState:
    """First/second moment accumulators per parameter, plus timestep."""

    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict) -> AdamState:
    """Zero-initialized :class:`AdamState` matching ``params`` in shape."""
    return AdamState(m={k: np.zeros_like(p) for k, p in params.items()},
                     v={k: np.zeros_like(p) for k, p in params.items()},
                     t=0)


def adam_step(params: dict, grads: dict, state: AdamState,
              config: TrainConfig) -> dict:
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = state.m[k] / corr1
        v_hat = state.v[k] / corr2
        out[k] = p - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
    return out


def run_training(params: dict, n_samples: int, batch_grad, eval_loss,
                 config: TrainConfig, project=None):
    """Seeded split + mini-batch Adam; returns (params, TrainHistory).

    ``batch_grad(params, idx)`` returns the gradient dict for the given
    sample indices; ``eval_loss(params, idx)`` returns (loss,
    components).  ``project``, if given, maps params to params after
    every Adam step (e.g. a nonnegativity constraint).

    The first round(validation_fraction * n) entries of one seeded
    shuffle are held out for validation; the training remainder is
    reshuffled every epoch.  The returned params are those with the best
    validation loss at any epoch boundary unless ``keep_last`` is set.
    """
    if n_samples < 10:
        raise TrainError("need at least 10 samples to train")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(n_samples)
    n_val = int(round(config.validation_fraction * n_samples))
    if n_val < 1 or n_samples - n_val < 1:
        raise TrainError("validation split leaves an empty partition")
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]

    state = adam_init(params)
    history = TrainHistory()
    best_loss = np.inf
    best_params = params
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_idx.size)
        for start in range(0, train_idx.size, config.batch_size):
            batch = train_idx[order[start:start + config.batch_size]]
            grads = batch_grad(params, batch)
            params = adam_step(params, grads, state, config)
            if project is not None:
                params = project(params)
        tr_loss, tr_comp = eval_loss(params, train_idx)
        va_loss, va_comp = eval_loss(params, val_idx)
        history.train_loss.append(float(tr_loss))
        history.val_loss.append(float(va_loss))
        history.train_components.append(np.asarray(tr_comp, dtype=float))
        history.val_components.append(np.asarray(va_comp, dtype=float))
        if va_loss < best_loss:
            best_loss = va_loss
            best_params = params
            history.best_epoch = epoch
    if config.keep_last:
        return params, history
    return best_params, history
