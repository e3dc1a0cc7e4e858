"""Desk-scale supervised training of GRU nets as covariance operators.

The nets see frame-wise covariance streams and regress closed-form targets:
the regularized inverse or the principal eigenvector of the running-mean
covariance up to the current frame.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .adl import AdlMvdrConfig, end_to_end_gradient, pack_covariance, unpack_matrix, unpack_vector
from .errors import DimensionError, DivergenceError, ParameterError
from .gru import GruNetParams, gru_backward, gru_forward
from .mvdr import DEFAULT_LOADING, principal_eigenvector, regularized_inverse

TASKS = ("inverse", "steering")


class StreamDataset(NamedTuple):
    """``inputs (T, S, 2D^2)`` and real ``targets (T, S, O)`` for ``S`` sequences."""

    inputs: np.ndarray
    targets: np.ndarray
    task: str
    dim: int

    @property
    def num_sequences(self) -> int:
        return self.inputs.shape[1]


def _random_unitary(rng, S: int, D: int) -> np.ndarray:
    A = rng.standard_normal((S, D, D)) + 1j * rng.standard_normal((S, D, D))
    Q, R = np.linalg.qr(A)
    d = np.diagonal(R, axis1=-2, axis2=-1)
    return Q * (d / np.abs(d))[:, None, :]


def _snapshot_frames(rng, R: np.ndarray, frames: int, snapshots: int) -> np.ndarray:
    """Frame-wise sample covariances from ``snapshots`` draws of CN(0, R)."""
    S, D, _ = R.shape
    L = np.linalg.cholesky(R)
    z = (rng.standard_normal((S, frames, snapshots, D)) + 1j * rng.standard_normal((S, frames, snapshots, D)))
    x = np.einsum("sij,stkj->stki", L, z / np.sqrt(2.0))
    return np.einsum("stki,stkj->stij", x, np.conj(x)) / snapshots


def _running_mean(frames: np.ndarray) -> np.ndarray:
    T = frames.shape[1]
    return np.cumsum(frames, axis=1) / np.arange(1, T + 1)[None, :, None, None]


def synthetic_streams(task: str, seed: int, num_sequences: int = 512, frames: int = 20, dim: int = 2,
                      snapshots: int = 64, eig_range=(0.4, 1.6)) -> StreamDataset:
    """Synthetic PSD covariance streams with closed-form targets.

    ``inverse``: each sequence draws a covariance with trace ``dim`` and
    eigenvalues in ``eig_range`` (for D=2 the second is ``2 - lambda``); the
    target is the regularized inverse of the running mean.

    ``steering``: a dominant rank-one term ``s s^H`` (first entry of ``s``
    real, magnitude ratio in [0.5, 2]) plus a weak white floor; the target is
    the gauge-fixed principal eigenvector of the running mean.
    """
    if task not in TASKS:
        raise ParameterError(f"unknown task {task!r}; expected one of {TASKS}")
    if dim < 1 or frames < 1 or num_sequences < 1 or snapshots < dim:
        raise ParameterError("dataset sizes must be positive and snapshots >= dim")
    rng = np.random.default_rng([seed, TASKS.index(task)])
    S, D = num_sequences, dim
    if task == "inverse":
        lo, hi = eig_range
        ev = rng.uniform(lo, hi, (S, D))
        if D == 2:
            ev[:, 1] = 2.0 - ev[:, 0]
        ev *= D / ev.sum(axis=1, keepdims=True)
        Q = _random_unitary(rng, S, D)
        R = Q @ (ev[:, :, None] * np.conj(np.swapaxes(Q, 1, 2)))
    else:
        s = np.ones((S, D), dtype=np.complex128)
        s[:, 1:] = rng.uniform(0.5, 2.0, (S, D - 1)) * np.exp(1j * rng.uniform(-np.pi, np.pi, (S, D - 1)))
        s /= np.linalg.norm(s, axis=1, keepdims=True)
        R = D * (0.9 * np.einsum("si,sj->sij", s, np.conj(s)) + 0.1 / D * np.eye(D))
    fr = _snapshot_frames(rng, R, frames, snapshots)
    run = _running_mean(fr)
    if task == "inverse":
        tgt = pack_covariance(regularized_inverse(run, DEFAULT_LOADING))
    else:
        v = principal_eigenvector(run).vector
        tgt = np.concatenate([v.real, v.imag], axis=-1)
    return StreamDataset(np.swapaxes(pack_covariance(fr), 0, 1), np.swapaxes(tgt, 0, 1), task, D)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = True
    batch: int = 64
    seed: int = 0
    log_every: int = 1


class TrainResult(NamedTuple):
    params: GruNetParams
    losses: np.ndarray


def sequence_loss(params: GruNetParams, inputs: np.ndarray, targets: np.ndarray, grad: bool = True):
    """Squared error summed over frames and outputs, averaged over sequences."""
    if grad:
        out, cache = gru_forward(params, inputs, keep_cache=True)
    else:
        out = gru_forward(params, inputs)
    if out.shape != targets.shape:
        raise DimensionError(f"net output {out.shape} does not match targets {targets.shape}")
    diff = out - targets
    B = inputs.shape[1]
    loss = float(np.sum(diff ** 2) / B)
    if not grad:
        return loss
    return loss, gru_backward(params, cache, 2.0 * diff / B)


def _momentum_loop(params: GruNetParams, cfg: TrainConfig, loss_and_grad, log_path=None) -> TrainResult:
    if cfg.steps < 1 or cfg.lr <= 0 or not 0 <= cfg.momentum < 1:
        raise ParameterError("need steps >= 1, lr > 0 and momentum in [0, 1)")
    params = params.copy()
    theta = params.to_vector()
    vel = np.zeros_like(theta)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, g = loss_and_grad(params, step)
        gvec = g.to_vector()
        if not (np.isfinite(loss) and np.all(np.isfinite(gvec))):
            raise DivergenceError(f"non-finite loss/gradient at step {step}: loss={loss}, "
                                  f"last finite loss={losses[step - 1] if step else 'n/a'}, "
                                  f"|theta|={np.linalg.norm(theta):.3g}")
        losses[step] = loss
        vel = cfg.momentum * vel - cfg.lr * gvec
        theta = theta + (cfg.momentum * vel - cfg.lr * gvec if cfg.nesterov else vel)
        params.load_vector(theta)
    if log_path is not None:
        write_loss_log(log_path, losses, cfg.log_every)
    return TrainResult(params, losses)


def train_gru_supervised(params: GruNetParams, data: StreamDataset, cfg: TrainConfig = TrainConfig(),
                         log_path=None) -> TrainResult:
    """Momentum SGD on :func:`sequence_loss` with seeded minibatches.

    Raises :class:`DivergenceError` as soon as the loss or gradient stops
    being finite.
    """
    if params.input_size != data.inputs.shape[-1] or params.output_size != data.targets.shape[-1]:
        raise DimensionError(f"net {params.input_size}->{params.output_size} does not fit data "
                             f"{data.inputs.shape[-1]}->{data.targets.shape[-1]}")
    rng = np.random.default_rng(cfg.seed)
    S = data.num_sequences
    batch = min(cfg.batch, S)

    def step_fn(p, _step):
        idx = rng.choice(S, batch, replace=False)
        return sequence_loss(p, data.inputs[:, idx], data.targets[:, idx])

    return _momentum_loop(params, cfg, step_fn, log_path)


def write_loss_log(path, losses, every: int = 1) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i in range(0, len(losses), max(1, every)):
            w.writerow([i, f"{losses[i]:.10g}"])
    tmp.replace(path)


def inverse_error(params: GruNetParams, data: StreamDataset) -> float:
    """Mean relative Frobenius error of the predicted inverses."""
    out = gru_forward(params, data.inputs)
    est, ref = unpack_matrix(out, data.dim), unpack_matrix(data.targets, data.dim)
    return float(np.mean(np.linalg.norm(est - ref, axis=(-2, -1)) / np.linalg.norm(ref, axis=(-2, -1))))


def steering_error(params: GruNetParams, data: StreamDataset) -> float:
    """Mean sine of the angle between predicted and true vectors (phase-blind)."""
    out = gru_forward(params, data.inputs)
    est, ref = unpack_vector(out, data.dim), unpack_vector(data.targets, data.dim)
    cos = np.abs(np.sum(np.conj(est) * ref, axis=-1))
    cos /= np.maximum(np.linalg.norm(est, axis=-1) * np.linalg.norm(ref, axis=-1), 1e-300)
    return float(np.mean(np.sqrt(np.clip(1.0 - cos ** 2, 0.0, None))))


def finetune_end_to_end(mixture, est, target, v_params: GruNetParams, inv_params: GruNetParams,
                        config: AdlMvdrConfig, cfg: TrainConfig = TrainConfig(steps=20)):
    """Joint momentum-SGD steps on the negative Si-SNR of one toy utterance."""
    nv = v_params.num_parameters
    v, p = v_params.copy(), inv_params.copy()
    theta = np.concatenate([v.to_vector(), p.to_vector()])
    vel = np.zeros_like(theta)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        g = end_to_end_gradient(mixture, est, target, v, p, config)
        gvec = np.concatenate([g.v_grad.to_vector(), g.inv_grad.to_vector()])
        if not (np.isfinite(g.loss) and np.all(np.isfinite(gvec))):
            raise DivergenceError(f"non-finite end-to-end loss/gradient at step {step}")
        losses[step] = g.loss
        vel = cfg.momentum * vel - cfg.lr * gvec
        theta = theta + (cfg.momentum * vel - cfg.lr * gvec if cfg.nesterov else vel)
        v.load_vector(theta[:nv])
        p.load_vector(theta[nv:])
    return v, p, losses
