"""The streaming overthinking head.

Per token: a single-query scaled-dot-product softmax pool summarizes the
assistant prefix in O(1) via max-shifted running accumulators, an affine
projection compresses the summary to width d_p, a closed-form gated
recurrent cell updates the memory vector, and a sigmoid head emits the
overthinking probability. ``step`` is the incremental path used live;
``forward_batch`` recomputes the whole stream and is the reference for
training and for streaming-equivalence checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels

TENSOR_NAMES = (
    "query",
    "proj_w",
    "proj_b",
    "cfc_f_w",
    "cfc_f_b",
    "cfc_g_w",
    "cfc_g_b",
    "cfc_a_w",
    "cfc_a_b",
    "cfc_b_w",
    "cfc_b_b",
    "head_w",
    "head_b",
)


class DimensionMismatch(Exception):
    pass


class NonFiniteInput(Exception):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    d: int
    d_p: int = 64
    layer: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.d_p < 1:
            raise ValueError("d and d_p must be >= 1")


def tensor_shapes(config: DetectorConfig) -> dict:
    d, d_p = config.d, config.d_p
    shapes = {"query": (d,), "proj_w": (d_p, d), "proj_b": (d_p,)}
    for gate in ("f", "g", "a", "b"):
        shapes[f"cfc_{gate}_w"] = (d_p, 2 * d_p)
        shapes[f"cfc_{gate}_b"] = (d_p,)
    shapes["head_w"] = (d_p,)
    shapes["head_b"] = ()
    return shapes


@dataclass
class DetectorParams:
    """All learnable tensors, float64 arrays on the float32 grid.

    Values are kept exactly representable in float32 so checkpoints
    (which store float32 payloads) round-trip bit-exactly.
    """

    config: DetectorConfig
    tensors: dict

    def __post_init__(self):
        expected = tensor_shapes(self.config)
        if set(self.tensors) != set(expected):
            raise DimensionMismatch("tensor set does not match config")
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise DimensionMismatch(f"{name}: expected shape {shape}, got {arr.shape}")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def as_tuple(self) -> tuple:
        return tuple(self.tensors[name] for name in TENSOR_NAMES)

    def copy(self) -> "DetectorParams":
        return DetectorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def snap_f32(arr: np.ndarray) -> np.ndarray:
    """Round float64 values to the nearest float32-representable value."""
    return arr.astype(np.float32).astype(np.float64)


def init_params(config: DetectorConfig) -> DetectorParams:
    """Seeded uniform init in +-1/sqrt(fan_in) per tensor."""
    rng = np.random.default_rng(config.seed)
    shapes = tensor_shapes(config)
    fan_in = {"query": config.d, "proj_w": config.d, "proj_b": config.d}
    for gate in ("f", "g", "a", "b"):
        fan_in[f"cfc_{gate}_w"] = 2 * config.d_p
        fan_in[f"cfc_{gate}_b"] = 2 * config.d_p
    fan_in["head_w"] = config.d_p
    fan_in["head_b"] = config.d_p

    tensors = {}
    for name in TENSOR_NAMES:
        bound = 1.0 / math.sqrt(fan_in[name])
        tensors[name] = snap_f32(rng.uniform(-bound, bound, size=shapes[name]))
    return DetectorParams(config, tensors)


def zero_params(config: DetectorConfig) -> DetectorParams:
    return DetectorParams(
        config, {name: np.zeros(shape) for name, shape in tensor_shapes(config).items()}
    )


def param_count(config: DetectorConfig) -> int:
    """Exact learnable scalar count implied by the config."""
    d, d_p = config.d, config.d_p
    return d + d_p * d + d_p + 4 * (d_p * 2 * d_p + d_p) + d_p + 1


@dataclass
class DetectorState:
    """Mutable per-stream state: running softmax accumulators + memory."""

    max_score: float
    denom: float
    wsum: np.ndarray
    m: np.ndarray
    t: int

    def copy(self) -> "DetectorState":
        return DetectorState(self.max_score, self.denom, self.wsum.copy(), self.m.copy(), self.t)


def _check_frames(arr: np.ndarray, d: int, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, d)
    if arr.ndim != 2 or (arr.shape[0] > 0 and arr.shape[1] != d):
        raise DimensionMismatch(f"{what}: expected width {d}, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise NonFiniteInput(f"{what} contains non-finite values")
    if arr.shape[0] == 0:
        arr = arr.reshape(0, d)
    return arr


def init_state(params: DetectorParams, prompt_frames) -> DetectorState:
    """Fresh state with m_0 pooled from the prompt; accumulators empty.

    Prompt frames never enter the assistant-prefix pool; an empty prompt
    falls back to a zero memory vector.
    """
    d = params.config.d
    prompt = _check_frames(prompt_frames, d, "prompt frames")
    m0 = _kernels.init_memory(params.as_tuple(), prompt)
    return DetectorState(
        max_score=-np.inf,
        denom=0.0,
        wsum=np.zeros(d),
        m=np.asarray(m0, dtype=np.float64),
        t=0,
    )


def _sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _sigmoid_vec(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def step(params: DetectorParams, state: DetectorState, h_t) -> tuple:
    """One incremental token update; returns (new state, probability).

    The input state is not modified. Arithmetic runs in the dtype of the
    state's accumulators (float64 by default; seed a float32 state to
    measure reduced-precision drift).
    """
    dtype = state.wsum.dtype
    d = params.config.d
    h = np.asarray(h_t, dtype=dtype).reshape(-1)
    if h.shape[0] != d:
        raise DimensionMismatch(f"frame width {h.shape[0]} != configured d {d}")
    if not np.all(np.isfinite(h)):
        raise NonFiniteInput("frame contains non-finite values")

    query, proj_w, proj_b, wf, bf, wg, bg, wa, ba, wb, bb, head_w, head_b = (
        t.astype(dtype, copy=False) for t in params.as_tuple()
    )

    s = float(h @ query) / math.sqrt(d)
    new_max = max(state.max_score, s)
    rescale = dtype.type(math.exp(state.max_score - new_max))
    w_t = dtype.type(math.exp(s - new_max))
    denom = state.denom * rescale + w_t
    wsum = state.wsum * rescale + w_t * h
    pooled = wsum / denom

    h_hat = proj_w @ pooled + proj_b
    z = np.concatenate((h_hat, state.m.astype(dtype, copy=False)))
    f = np.tanh(wf @ z + bf)
    g = np.tanh(wg @ z + bg)
    gate = _sigmoid_vec(-(np.logaddexp(0.0, wa @ z + ba) + (wb @ z + bb)))
    m = gate * f + (1.0 - gate) * g
    p = _sigmoid_scalar(float(head_w @ m) + float(head_b))

    new_state = DetectorState(
        max_score=new_max, denom=float(denom), wsum=wsum, m=m.astype(dtype), t=state.t + 1
    )
    return new_state, p


def forward_batch(params: DetectorParams, frames, prompt_frames) -> np.ndarray:
    """Probabilities for every step with the full prefix softmax per step."""
    d = params.config.d
    frames = _check_frames(frames, d, "frames")
    prompt = _check_frames(prompt_frames, d, "prompt frames")
    return _kernels.forward_scores(params.as_tuple(), prompt, frames)


def with_config(params: DetectorParams, **changes) -> DetectorParams:
    return DetectorParams(replace(params.config, **changes), params.tensors)
