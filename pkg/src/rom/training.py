"""Token-level BCE training of the detection head over cached streams.

Gradients are exact analytic backprop through time (kernel backend);
``finite_diff_check`` is the independent central-difference oracle used
to verify them. Training is deterministic given (config, corpus): seeded
init, seeded shuffles, fixed index-ordered batch reduction, and
parameters snapped to the float32 grid after every step so checkpoints
round-trip bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .detector import (
    TENSOR_NAMES,
    DetectorConfig,
    DetectorParams,
    init_params,
    snap_f32,
)
from .storage import HiddenStream

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class LengthMismatch(Exception):
    pass


class EmptyCorpus(Exception):
    pass


class WidthMismatch(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    grad_clip_norm: Optional[float] = 1.0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be adam or sgd")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in [0, 1)")


@dataclass
class TrainReport:
    epochs: int
    train_loss: List[float] = field(default_factory=list)
    holdout_accuracy: List[float] = field(default_factory=list)
    holdout_auc: List[float] = field(default_factory=list)
    train_samples: int = 0
    holdout_samples: int = 0

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "train_loss": self.train_loss,
            "holdout_accuracy": self.holdout_accuracy,
            "holdout_auc": self.holdout_auc,
            "train_samples": self.train_samples,
            "holdout_samples": self.holdout_samples,
        }


def loss_bce(probs, labels) -> float:
    """Mean negative log-likelihood over assistant tokens.

    Probabilities are clamped to [1e-7, 1-1e-7] inside the logs only.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise LengthMismatch(f"{p.shape[0]} probabilities vs {y.shape[0]} labels")
    if p.size == 0:
        raise LengthMismatch("loss over an empty sequence is undefined")
    pc = np.clip(p, 1e-7, 1.0 - 1e-7)
    return -float(np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


def _unpack(sample) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    stream, labels = sample
    if isinstance(stream, HiddenStream):
        prompt = stream.prompt.astype(np.float64)
        frames = stream.frames.astype(np.float64)
    else:
        prompt, frames = (np.asarray(b, dtype=np.float64) for b in stream)
    labels = np.asarray(labels, dtype=np.float64)
    if frames.shape[0] != labels.shape[0]:
        raise LengthMismatch(
            f"{frames.shape[0]} frames vs {labels.shape[0]} labels"
        )
    return prompt, frames, labels


def grad(params: DetectorParams, sample) -> Tuple[float, dict]:
    """(loss, gradient tensors) for one (stream, labels) sample."""
    prompt, frames, labels = _unpack(sample)
    if frames.shape[1] != params.config.d:
        raise WidthMismatch(f"stream width {frames.shape[1]} vs config d {params.config.d}")
    return _kernels.loss_and_grad(params.as_tuple(), prompt, frames, labels)


def _sample_loss(params: DetectorParams, prompt, frames, labels) -> float:
    probs = _kernels.forward_scores(params.as_tuple(), prompt, frames)
    return loss_bce(probs, labels)


def finite_diff_check(
    params: DetectorParams, sample, probes: int = 100, h: float = 1e-5, seed: int = 0
) -> float:
    """Worst relative error between analytic and central-difference grads.

    Probe coordinates cycle over every named tensor so each one is
    covered; the relative error denominator is max(|analytic|, |fd|,
    1e-8).
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    prompt, frames, labels = _unpack(sample)
    _, analytic = _kernels.loss_and_grad(params.as_tuple(), prompt, frames, labels)

    rng = np.random.default_rng((seed, probes))
    work = params.copy()
    worst = 0.0
    for k in range(probes):
        name = TENSOR_NAMES[k % len(TENSOR_NAMES)]
        arr = work.tensors[name]
        idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
        orig = float(arr[idx]) if arr.shape else float(arr[()])
        for sign in (1.0, -1.0):
            arr[idx if arr.shape else ()] = orig + sign * h
            if sign > 0:
                lp = _sample_loss(work, prompt, frames, labels)
            else:
                lm = _sample_loss(work, prompt, frames, labels)
        arr[idx if arr.shape else ()] = orig
        fd = (lp - lm) / (2.0 * h)
        an = float(np.asarray(analytic[name])[idx]) if arr.shape else float(np.asarray(analytic[name]))
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def token_accuracy(probs, labels) -> float:
    p = np.asarray(probs)
    y = np.asarray(labels)
    return float(np.mean((p > 0.5) == (y > 0.5)))


def token_auc(scores, labels) -> float:
    """Rank-based AUC with tied scores averaged; nan when one class is absent."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels) > 0.5
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[y].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        arr = np.asarray(g)
        total += float(np.sum(arr * arr))
    return math.sqrt(total)


class _Adam:
    def __init__(self, shapes):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def apply(self, params: DetectorParams, grads: dict, lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - ADAM_BETA1**self.t
        bc2 = 1.0 - ADAM_BETA2**self.t
        for name in TENSOR_NAMES:
            g = np.asarray(grads[name])
            self.m[name] = ADAM_BETA1 * self.m[name] + (1 - ADAM_BETA1) * g
            self.v[name] = ADAM_BETA2 * self.v[name] + (1 - ADAM_BETA2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + ADAM_EPS)
            params.tensors[name] = snap_f32(params.tensors[name] - lr * update)


class _Sgd:
    def apply(self, params: DetectorParams, grads: dict, lr: float) -> None:
        for name in TENSOR_NAMES:
            params.tensors[name] = snap_f32(
                params.tensors[name] - lr * np.asarray(grads[name])
            )


def _evaluate(params: DetectorParams, samples) -> Tuple[float, float]:
    all_p, all_y = [], []
    for prompt, frames, labels in samples:
        all_p.append(_kernels.forward_scores(params.as_tuple(), prompt, frames))
        all_y.append(labels)
    p = np.concatenate(all_p)
    y = np.concatenate(all_y)
    return token_accuracy(p, y), token_auc(p, y)


def train(
    config: TrainConfig,
    samples: Sequence,
    detector: Optional[DetectorConfig] = None,
) -> Tuple[DetectorParams, TrainReport]:
    """Seeded mini-batch training; reproducible to the bit.

    ``samples`` is a sequence of (HiddenStream-or-(prompt, frames),
    labels) pairs of uniform width. The held-out split is carved off
    deterministically before the first epoch.
    """
    unpacked = [_unpack(s) for s in samples]
    if not unpacked:
        raise EmptyCorpus("training corpus is empty")
    d = unpacked[0][1].shape[1]
    for prompt, frames, _ in unpacked:
        if frames.shape[1] != d or (prompt.size and prompt.shape[1] != d):
            raise WidthMismatch("corpus mixes hidden widths")

    if detector is None:
        detector = DetectorConfig(d=d, seed=config.seed)
    elif detector.d != d:
        raise WidthMismatch(f"detector configured d={detector.d}, corpus is d={d}")

    params = init_params(detector)
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(unpacked))
    n_hold = int(round(config.holdout_fraction * len(unpacked)))
    if config.holdout_fraction > 0 and n_hold == 0 and len(unpacked) > 1:
        n_hold = 1
    holdout = [unpacked[i] for i in perm[:n_hold]]
    train_set = [unpacked[i] for i in perm[n_hold:]]
    if not train_set:
        raise EmptyCorpus("holdout fraction leaves no training samples")

    optimizer = _Adam({k: v.shape for k, v in params.tensors.items()}) if config.optimizer == "adam" else _Sgd()
    report = TrainReport(
        epochs=config.epochs, train_samples=len(train_set), holdout_samples=len(holdout)
    )

    for _epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            acc = None
            for i in batch:  # fixed reduction order keeps runs bit-identical
                prompt, frames, labels = train_set[i]
                loss, g = _kernels.loss_and_grad(params.as_tuple(), prompt, frames, labels)
                epoch_loss += loss
                if acc is None:
                    acc = {k: np.asarray(v, dtype=np.float64).copy() for k, v in g.items()}
                else:
                    for k in acc:
                        acc[k] += g[k]
            for k in acc:
                acc[k] /= len(batch)
            if config.grad_clip_norm is not None:
                norm = _global_norm(acc)
                if norm > config.grad_clip_norm:
                    scale = config.grad_clip_norm / norm
                    for k in acc:
                        acc[k] = acc[k] * scale
            optimizer.apply(params, acc, config.learning_rate)
        report.train_loss.append(epoch_loss / len(train_set))
        if holdout:
            acc_h, auc_h = _evaluate(params, holdout)
        else:
            acc_h, auc_h = float("nan"), float("nan")
        report.holdout_accuracy.append(acc_h)
        report.holdout_auc.append(auc_h)
    return params, report
