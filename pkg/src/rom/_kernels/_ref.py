"""Pure-numpy kernel backend.

Implements the full forward pass (attention-pooled prefix summary ->
gated recurrent memory -> sigmoid head) and its exact analytic gradient
with backprop through time. The compiled backend in ``_core.pyx``
mirrors this module operation for operation; this file is the readable
reference and the import-time fallback.

Shapes: prompt (P, d), frames (T, d), projection width d_p. All math is
float64. Prefix softmax pooling uses running max-rescaled accumulators
in the forward pass and a mirrored rescaled suffix accumulation in the
backward pass, so no intermediate can overflow regardless of score
range.
"""

from __future__ import annotations

import math

import numpy as np

LOG_CLAMP = 1e-7


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    # log(1 + e^x), stable on both tails
    return np.logaddexp(0.0, x)


def _pool_prompt(query, prompt):
    """(pooled summary, softmax weights) over prompt frames; (None, None) if empty."""
    if prompt.shape[0] == 0:
        return None, None
    s = prompt @ query / math.sqrt(query.shape[0])
    e = np.exp(s - s.max())
    alpha = e / e.sum()
    return alpha @ prompt, alpha


def init_memory(params, prompt):
    """m_0: affine projection of the pooled prompt, zeros when promptless."""
    query, proj_w, proj_b = params[0], params[1], params[2]
    pooled, _ = _pool_prompt(query, prompt)
    if pooled is None:
        return np.zeros(proj_w.shape[0])
    return proj_w @ pooled + proj_b


def _forward(params, prompt, frames, keep):
    """Shared forward pass; keep=True retains per-step intermediates."""
    (query, proj_w, proj_b, wf, bf, wg, bg, wa, ba, wb, bb, head_w, head_b) = params
    d = query.shape[0]
    d_p = proj_w.shape[0]
    T = frames.shape[0]
    inv_sqrt_d = 1.0 / math.sqrt(d)

    m = init_memory(params, prompt)
    probs = np.empty(T)
    cache = None
    if keep:
        cache = {
            "scores": np.empty(T),
            "run_max": np.empty(T),
            "log_denom": np.empty(T),
            "pooled": np.empty((T, d)),
            "z": np.empty((T, 2 * d_p)),
            "f": np.empty((T, d_p)),
            "g": np.empty((T, d_p)),
            "gate": np.empty((T, d_p)),
            "sig_ua": np.empty((T, d_p)),
            "m": np.empty((T, d_p)),
            "m0": m.copy(),
        }

    run_max = -np.inf
    denom = 0.0
    wsum = np.zeros(d)
    for t in range(T):
        h = frames[t]
        s = float(h @ query) * inv_sqrt_d
        new_max = s if s > run_max else run_max
        rescale = math.exp(run_max - new_max)
        w_t = math.exp(s - new_max)
        denom = denom * rescale + w_t
        wsum = wsum * rescale + w_t * h
        run_max = new_max
        pooled = wsum / denom

        h_hat = proj_w @ pooled + proj_b
        z = np.concatenate((h_hat, m))
        u_f = wf @ z + bf
        u_g = wg @ z + bg
        u_a = wa @ z + ba
        u_b = wb @ z + bb
        f = np.tanh(u_f)
        g = np.tanh(u_g)
        gate = _sigmoid(-(_softplus(u_a) + u_b))
        m = gate * f + (1.0 - gate) * g
        logit = float(head_w @ m) + float(head_b)
        probs[t] = 1.0 / (1.0 + math.exp(-logit)) if logit >= 0 else math.exp(logit) / (1.0 + math.exp(logit))

        if keep:
            cache["scores"][t] = s
            cache["run_max"][t] = run_max
            cache["log_denom"][t] = math.log(denom)
            cache["pooled"][t] = pooled
            cache["z"][t] = z
            cache["f"][t] = f
            cache["g"][t] = g
            cache["gate"][t] = gate
            cache["sig_ua"][t] = _sigmoid(u_a)
            cache["m"][t] = m
    return probs, cache


def forward_scores(params, prompt, frames):
    """Overthinking probability per assistant token, full-prefix pooling."""
    probs, _ = _forward(params, prompt, frames, keep=False)
    return probs


def loss_and_grad(params, prompt, frames, labels):
    """Mean token BCE and its exact gradient w.r.t. every parameter tensor.

    Probabilities are clamped to [1e-7, 1-1e-7] inside the logs only; a
    clamped token contributes zero gradient, matching the finite
    difference of the actual loss surface.
    """
    (query, proj_w, proj_b, wf, bf, wg, bg, wa, ba, wb, bb, head_w, head_b) = params
    d = query.shape[0]
    d_p = proj_w.shape[0]
    T = frames.shape[0]
    if T == 0:
        raise ValueError("cannot take loss over an empty token sequence")
    inv_sqrt_d = 1.0 / math.sqrt(d)

    probs, cache = _forward(params, prompt, frames, keep=True)
    y = np.asarray(labels, dtype=np.float64)

    clamped = np.clip(probs, LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = -float(np.mean(y * np.log(clamped) + (1.0 - y) * np.log(1.0 - clamped)))
    inside = (probs > LOG_CLAMP) & (probs < 1.0 - LOG_CLAMP)
    g_logit = np.where(inside, probs - y, 0.0) / T

    grads = {
        "query": np.zeros_like(query),
        "proj_w": np.zeros_like(proj_w),
        "proj_b": np.zeros_like(proj_b),
        "cfc_f_w": np.zeros_like(wf),
        "cfc_f_b": np.zeros_like(bf),
        "cfc_g_w": np.zeros_like(wg),
        "cfc_g_b": np.zeros_like(bg),
        "cfc_a_w": np.zeros_like(wa),
        "cfc_a_b": np.zeros_like(ba),
        "cfc_b_w": np.zeros_like(wb),
        "cfc_b_b": np.zeros_like(bb),
        "head_w": np.zeros_like(head_w),
        "head_b": np.zeros_like(head_b),
    }

    # Suffix accumulators for the pooling gradient, held as value * exp(ref)
    # with a floating reference exponent so nothing overflows.
    suf_vec = np.zeros(d)
    suf_sc = 0.0
    suf_ref = -np.inf

    carry = np.zeros(d_p)  # dL/dm_t arriving from step t+1
    for t in range(T - 1, -1, -1):
        z = cache["z"][t]
        f = cache["f"][t]
        g = cache["g"][t]
        gate = cache["gate"][t]

        d_m = g_logit[t] * head_w + carry
        grads["head_w"] += g_logit[t] * cache["m"][t]
        grads["head_b"] += g_logit[t]

        d_gate = d_m * (f - g)
        d_uf = (d_m * gate) * (1.0 - f * f)
        d_ug = (d_m * (1.0 - gate)) * (1.0 - g * g)
        d_ab = -d_gate * gate * (1.0 - gate)
        d_ua = d_ab * cache["sig_ua"][t]
        d_ub = d_ab

        grads["cfc_f_w"] += np.outer(d_uf, z)
        grads["cfc_f_b"] += d_uf
        grads["cfc_g_w"] += np.outer(d_ug, z)
        grads["cfc_g_b"] += d_ug
        grads["cfc_a_w"] += np.outer(d_ua, z)
        grads["cfc_a_b"] += d_ua
        grads["cfc_b_w"] += np.outer(d_ub, z)
        grads["cfc_b_b"] += d_ub

        d_z = wf.T @ d_uf + wg.T @ d_ug + wa.T @ d_ua + wb.T @ d_ub
        d_hhat = d_z[:d_p]
        carry = d_z[d_p:]

        pooled = cache["pooled"][t]
        grads["proj_w"] += np.outer(d_hhat, pooled)
        grads["proj_b"] += d_hhat
        c_t = proj_w.T @ d_hhat

        # fold this step into the suffix accumulators
        e_t = -(cache["run_max"][t] + cache["log_denom"][t])
        new_ref = max(suf_ref, e_t)
        scale = math.exp(suf_ref - new_ref) if suf_ref != -np.inf else 0.0
        w_t = math.exp(e_t - new_ref)
        suf_vec = suf_vec * scale + w_t * c_t
        suf_sc = suf_sc * scale + w_t * float(pooled @ c_t)
        suf_ref = new_ref

        d_s = math.exp(cache["scores"][t] + suf_ref) * (float(frames[t] @ suf_vec) - suf_sc)
        grads["query"] += (d_s * inv_sqrt_d) * frames[t]

    # prompt path: carry now holds dL/dm_0
    if prompt.shape[0] > 0:
        pooled_p, alpha = _pool_prompt(query, prompt)
        grads["proj_w"] += np.outer(carry, pooled_p)
        grads["proj_b"] += carry
        c_p = proj_w.T @ carry
        d_sp = alpha * ((prompt - pooled_p) @ c_p)
        grads["query"] += (d_sp @ prompt) * inv_sqrt_d

    return loss, grads
