# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Same contract and same algorithm as ``_ref``: forward scoring with
max-rescaled running softmax accumulators and exact backprop through
time with a rescaled suffix accumulation for the pooling gradient.
Plain C loops; double precision throughout.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, tanh, INFINITY

cnp.import_array()

LOG_CLAMP = 1e-7


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _softplus(double x) nogil:
    # mirrors numpy.logaddexp(0, x)
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline void _affine(double[:, ::1] w, double[::1] b, double[::1] x,
                         double[::1] out) nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    cdef double acc
    for i in range(rows):
        acc = b[i]
        for j in range(cols):
            acc += w[i, j] * x[j]
        out[i] = acc


cdef inline void _add_outer(double[:, ::1] acc, double[::1] u, double[::1] v) nogil:
    cdef Py_ssize_t i, j
    for i in range(u.shape[0]):
        for j in range(v.shape[0]):
            acc[i, j] += u[i] * v[j]


cdef inline void _add_wt_vec(double[:, ::1] w, double[::1] u, double[::1] out) nogil:
    # out += w.T @ u
    cdef Py_ssize_t i, j
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            out[j] += w[i, j] * u[i]


def _as_c(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


cdef _pool_prompt(double[::1] query, double[:, ::1] prompt):
    cdef Py_ssize_t P = prompt.shape[0], d = prompt.shape[1]
    cdef Py_ssize_t i, j
    cdef double inv_sqrt_d = 1.0 / sqrt(<double> d)
    s_arr = np.empty(P)
    cdef double[::1] s = s_arr
    cdef double smax = -INFINITY, acc, tot = 0.0
    for i in range(P):
        acc = 0.0
        for j in range(d):
            acc += prompt[i, j] * query[j]
        s[i] = acc * inv_sqrt_d
        if s[i] > smax:
            smax = s[i]
    alpha_arr = np.empty(P)
    cdef double[::1] alpha = alpha_arr
    for i in range(P):
        alpha[i] = exp(s[i] - smax)
        tot += alpha[i]
    pooled_arr = np.zeros(d)
    cdef double[::1] pooled = pooled_arr
    for i in range(P):
        alpha[i] /= tot
        for j in range(d):
            pooled[j] += alpha[i] * prompt[i, j]
    return pooled_arr, alpha_arr


def init_memory(params, prompt):
    query = _as_c(params[0])
    proj_w = _as_c(params[1])
    proj_b = _as_c(params[2])
    prompt = _as_c(prompt)
    if prompt.shape[0] == 0:
        return np.zeros(proj_w.shape[0])
    pooled, _ = _pool_prompt(query, prompt)
    return proj_w @ pooled + proj_b


def forward_scores(params, prompt, frames):
    probs, _ = _run_forward(params, prompt, frames, False)
    return probs


cdef _run_forward(params, prompt_in, frames_in, bint keep):
    query_a = _as_c(params[0]); proj_w_a = _as_c(params[1]); proj_b_a = _as_c(params[2])
    wf_a = _as_c(params[3]); bf_a = _as_c(params[4])
    wg_a = _as_c(params[5]); bg_a = _as_c(params[6])
    wa_a = _as_c(params[7]); ba_a = _as_c(params[8])
    wb_a = _as_c(params[9]); bb_a = _as_c(params[10])
    head_w_a = _as_c(params[11])
    cdef double head_b = float(np.asarray(params[12]))

    prompt = _as_c(prompt_in)
    frames_arr = _as_c(frames_in)

    cdef double[::1] query = query_a
    cdef double[:, ::1] proj_w = proj_w_a
    cdef double[::1] proj_b = proj_b_a
    cdef double[:, ::1] wf = wf_a, wg = wg_a, wa = wa_a, wb = wb_a
    cdef double[::1] bf = bf_a, bg = bg_a, ba = ba_a, bb = bb_a
    cdef double[::1] head_w = head_w_a
    cdef double[:, ::1] frames = frames_arr

    cdef Py_ssize_t d = query.shape[0]
    cdef Py_ssize_t d_p = proj_w.shape[0]
    cdef Py_ssize_t T = frames.shape[0]
    cdef double inv_sqrt_d = 1.0 / sqrt(<double> d)

    m0_arr = init_memory(params, prompt)
    probs_arr = np.empty(T)
    cdef double[::1] probs = probs_arr

    cache = None
    cdef double[::1] c_scores, c_run_max, c_log_denom
    cdef double[:, ::1] c_pooled, c_z, c_f, c_g, c_gate, c_sig_ua, c_m
    if keep:
        cache = {
            "scores": np.empty(T), "run_max": np.empty(T), "log_denom": np.empty(T),
            "pooled": np.empty((T, d)), "z": np.empty((T, 2 * d_p)),
            "f": np.empty((T, d_p)), "g": np.empty((T, d_p)),
            "gate": np.empty((T, d_p)), "sig_ua": np.empty((T, d_p)),
            "m": np.empty((T, d_p)), "m0": m0_arr.copy(),
        }
        c_scores = cache["scores"]; c_run_max = cache["run_max"]
        c_log_denom = cache["log_denom"]; c_pooled = cache["pooled"]
        c_z = cache["z"]; c_f = cache["f"]; c_g = cache["g"]
        c_gate = cache["gate"]; c_sig_ua = cache["sig_ua"]; c_m = cache["m"]

    m_arr = np.asarray(m0_arr, dtype=np.float64).copy()
    cdef double[::1] m = m_arr
    wsum_arr = np.zeros(d)
    cdef double[::1] wsum = wsum_arr
    pooled_arr = np.empty(d)
    cdef double[::1] pooled = pooled_arr
    z_arr = np.empty(2 * d_p)
    cdef double[::1] z = z_arr
    uf_arr = np.empty(d_p); ug_arr = np.empty(d_p)
    ua_arr = np.empty(d_p); ub_arr = np.empty(d_p)
    cdef double[::1] u_f = uf_arr, u_g = ug_arr, u_a = ua_arr, u_b = ub_arr

    cdef double run_max = -INFINITY, denom = 0.0
    cdef double s, new_max, rescale, w_t, logit, gate_i, f_i, g_i
    cdef Py_ssize_t t, i, j

    for t in range(T):
        s = 0.0
        for j in range(d):
            s += frames[t, j] * query[j]
        s *= inv_sqrt_d
        new_max = s if s > run_max else run_max
        rescale = exp(run_max - new_max)
        w_t = exp(s - new_max)
        denom = denom * rescale + w_t
        for j in range(d):
            wsum[j] = wsum[j] * rescale + w_t * frames[t, j]
            pooled[j] = wsum[j] / denom
        run_max = new_max

        _affine(proj_w, proj_b, pooled, z[:d_p])
        for i in range(d_p):
            z[d_p + i] = m[i]
        _affine(wf, bf, z, u_f)
        _affine(wg, bg, z, u_g)
        _affine(wa, ba, z, u_a)
        _affine(wb, bb, z, u_b)

        logit = head_b
        for i in range(d_p):
            f_i = tanh(u_f[i])
            g_i = tanh(u_g[i])
            gate_i = _sigmoid(-(_softplus(u_a[i]) + u_b[i]))
            m[i] = gate_i * f_i + (1.0 - gate_i) * g_i
            logit += head_w[i] * m[i]
            if keep:
                c_f[t, i] = f_i
                c_g[t, i] = g_i
                c_gate[t, i] = gate_i
                c_sig_ua[t, i] = _sigmoid(u_a[i])
                c_m[t, i] = m[i]
        probs[t] = _sigmoid(logit)

        if keep:
            c_scores[t] = s
            c_run_max[t] = run_max
            c_log_denom[t] = log(denom)
            for j in range(d):
                c_pooled[t, j] = pooled[j]
            for i in range(2 * d_p):
                c_z[t, i] = z[i]
    return probs_arr, cache


def loss_and_grad(params, prompt, frames, labels):
    query_a = _as_c(params[0]); proj_w_a = _as_c(params[1])
    wf_a = _as_c(params[3]); wg_a = _as_c(params[5])
    wa_a = _as_c(params[7]); wb_a = _as_c(params[9])
    head_w_a = _as_c(params[11])
    prompt_a = _as_c(prompt)
    frames_a = _as_c(frames)
    labels_a = _as_c(labels)

    cdef Py_ssize_t d = query_a.shape[0]
    cdef Py_ssize_t d_p = proj_w_a.shape[0]
    cdef Py_ssize_t T = frames_a.shape[0]
    if T == 0:
        raise ValueError("cannot take loss over an empty token sequence")

    probs_arr, cache = _run_forward(params, prompt_a, frames_a, True)

    cdef double[::1] probs = probs_arr
    cdef double[::1] y = labels_a
    cdef double eps = LOG_CLAMP
    cdef double loss = 0.0, pc
    cdef Py_ssize_t t, i, j

    g_logit_arr = np.zeros(T)
    cdef double[::1] g_logit = g_logit_arr
    for t in range(T):
        pc = probs[t]
        if pc < eps:
            pc = eps
        elif pc > 1.0 - eps:
            pc = 1.0 - eps
        loss -= y[t] * log(pc) + (1.0 - y[t]) * log(1.0 - pc)
        if eps < probs[t] < 1.0 - eps:
            g_logit[t] = (probs[t] - y[t]) / T
    loss /= T

    grads = {
        "query": np.zeros(d), "proj_w": np.zeros((d_p, d)), "proj_b": np.zeros(d_p),
        "cfc_f_w": np.zeros((d_p, 2 * d_p)), "cfc_f_b": np.zeros(d_p),
        "cfc_g_w": np.zeros((d_p, 2 * d_p)), "cfc_g_b": np.zeros(d_p),
        "cfc_a_w": np.zeros((d_p, 2 * d_p)), "cfc_a_b": np.zeros(d_p),
        "cfc_b_w": np.zeros((d_p, 2 * d_p)), "cfc_b_b": np.zeros(d_p),
        "head_w": np.zeros(d_p), "head_b": np.zeros(()),
    }
    cdef double[::1] g_query = grads["query"]
    cdef double[:, ::1] g_proj_w = grads["proj_w"]
    cdef double[::1] g_proj_b = grads["proj_b"]
    cdef double[:, ::1] g_wf = grads["cfc_f_w"], g_wg = grads["cfc_g_w"]
    cdef double[:, ::1] g_wa = grads["cfc_a_w"], g_wb = grads["cfc_b_w"]
    cdef double[::1] g_bf = grads["cfc_f_b"], g_bg = grads["cfc_g_b"]
    cdef double[::1] g_ba = grads["cfc_a_b"], g_bb = grads["cfc_b_b"]
    cdef double[::1] g_head_w = grads["head_w"]
    cdef double g_head_b = 0.0

    cdef double[:, ::1] proj_w = proj_w_a
    cdef double[:, ::1] wf = wf_a, wg = wg_a, wa = wa_a, wb = wb_a
    cdef double[::1] head_w = head_w_a
    cdef double[:, ::1] frames_v = frames_a

    cdef double[::1] c_scores = cache["scores"]
    cdef double[::1] c_run_max = cache["run_max"]
    cdef double[::1] c_log_denom = cache["log_denom"]
    cdef double[:, ::1] c_pooled = cache["pooled"]
    cdef double[:, ::1] c_z = cache["z"]
    cdef double[:, ::1] c_f = cache["f"], c_g = cache["g"]
    cdef double[:, ::1] c_gate = cache["gate"], c_sig_ua = cache["sig_ua"]
    cdef double[:, ::1] c_m = cache["m"]

    suf_vec_arr = np.zeros(d)
    cdef double[::1] suf_vec = suf_vec_arr
    cdef double suf_sc = 0.0, suf_ref = -INFINITY

    carry_arr = np.zeros(d_p)
    cdef double[::1] carry = carry_arr
    dm_arr = np.empty(d_p)
    cdef double[::1] d_m = dm_arr
    duf_arr = np.empty(d_p); dug_arr = np.empty(d_p)
    dua_arr = np.empty(d_p); dub_arr = np.empty(d_p)
    cdef double[::1] d_uf = duf_arr, d_ug = dug_arr, d_ua = dua_arr, d_ub = dub_arr
    dz_arr = np.empty(2 * d_p)
    cdef double[::1] d_z = dz_arr
    ct_arr = np.empty(d)
    cdef double[::1] c_t = ct_arr

    cdef double d_gate, d_ab, beta, e_t, new_ref, scale, w_s, d_s, hdot, gl

    for t in range(T - 1, -1, -1):
        gl = g_logit[t]
        for i in range(d_p):
            d_m[i] = gl * head_w[i] + carry[i]
            g_head_w[i] += gl * c_m[t, i]
        g_head_b += gl

        for i in range(d_p):
            d_gate = d_m[i] * (c_f[t, i] - c_g[t, i])
            d_uf[i] = (d_m[i] * c_gate[t, i]) * (1.0 - c_f[t, i] * c_f[t, i])
            d_ug[i] = (d_m[i] * (1.0 - c_gate[t, i])) * (1.0 - c_g[t, i] * c_g[t, i])
            d_ab = -d_gate * c_gate[t, i] * (1.0 - c_gate[t, i])
            d_ua[i] = d_ab * c_sig_ua[t, i]
            d_ub[i] = d_ab

        _add_outer(g_wf, d_uf, c_z[t])
        _add_outer(g_wg, d_ug, c_z[t])
        _add_outer(g_wa, d_ua, c_z[t])
        _add_outer(g_wb, d_ub, c_z[t])
        for i in range(d_p):
            g_bf[i] += d_uf[i]
            g_bg[i] += d_ug[i]
            g_ba[i] += d_ua[i]
            g_bb[i] += d_ub[i]

        for i in range(2 * d_p):
            d_z[i] = 0.0
        _add_wt_vec(wf, d_uf, d_z)
        _add_wt_vec(wg, d_ug, d_z)
        _add_wt_vec(wa, d_ua, d_z)
        _add_wt_vec(wb, d_ub, d_z)
        for i in range(d_p):
            carry[i] = d_z[d_p + i]

        _add_outer(g_proj_w, d_z[:d_p], c_pooled[t])
        for i in range(d_p):
            g_proj_b[i] += d_z[i]
        for j in range(d):
            c_t[j] = 0.0
        _add_wt_vec(proj_w, d_z[:d_p], c_t)

        beta = 0.0
        for j in range(d):
            beta += c_pooled[t, j] * c_t[j]
        e_t = -(c_run_max[t] + c_log_denom[t])
        new_ref = e_t if e_t > suf_ref else suf_ref
        scale = exp(suf_ref - new_ref) if suf_ref != -INFINITY else 0.0
        w_s = exp(e_t - new_ref)
        for j in range(d):
            suf_vec[j] = suf_vec[j] * scale + w_s * c_t[j]
        suf_sc = suf_sc * scale + w_s * beta
        suf_ref = new_ref

        hdot = 0.0
        for j in range(d):
            hdot += frames_v[t, j] * suf_vec[j]
        d_s = exp(c_scores[t] + suf_ref) * (hdot - suf_sc)
        d_s *= 1.0 / sqrt(<double> d)
        for j in range(d):
            g_query[j] += d_s * frames_v[t, j]

    if prompt_a.shape[0] > 0:
        pooled_p, alpha = _pool_prompt(query_a, prompt_a)
        grads["proj_w"] += np.outer(carry_arr, pooled_p)
        grads["proj_b"] += carry_arr
        c_p = proj_w_a.T @ carry_arr
        d_sp = alpha * ((prompt_a - pooled_p) @ c_p)
        grads["query"] += (d_sp @ prompt_a) / sqrt(<double> d)

    grads["head_b"] = np.asarray(g_head_b)
    return loss, grads
