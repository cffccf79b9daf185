"""Pure-Python versions of the compiled kernels.

Arithmetic is performed in the same order as the compiled code, so both
backends produce identical assignments from identical uniforms.
"""

import numpy as np


def gibbs_sweep(words, docs, z, nkw, nk, ndk, alpha, eta, uniforms):
    n_topics = nk.shape[0]
    v_eta = nkw.shape[1] * eta
    # list views are much faster than scalar numpy indexing
    w_list = words.tolist()
    d_list = docs.tolist()
    z_list = z.tolist()
    u_list = uniforms.tolist()
    nkw_cols = nkw.T.tolist()
    nk_l = nk.tolist()
    ndk_rows = ndk.tolist()
    topics = range(n_topics)
    cum = [0.0] * n_topics
    for i in range(len(w_list)):
        w = w_list[i]
        ndk_d = ndk_rows[d_list[i]]
        col = nkw_cols[w]
        k = z_list[i]
        col[k] -= 1
        nk_l[k] -= 1
        ndk_d[k] -= 1
        acc = 0.0
        for j in topics:
            acc = acc + (ndk_d[j] + alpha) * (col[j] + eta) / (nk_l[j] + v_eta)
            cum[j] = acc
        u = u_list[i] * acc
        k = n_topics - 1
        for j in topics:
            if u < cum[j]:
                k = j
                break
        z_list[i] = k
        col[k] += 1
        nk_l[k] += 1
        ndk_d[k] += 1
    z[:] = z_list
    nkw[:] = np.asarray(nkw_cols, dtype=nkw.dtype).reshape(nkw.shape[1], nkw.shape[0]).T
    nk[:] = nk_l
    ndk[:] = ndk_rows


def infer_sweep(words, z, ndk, phi, alpha, uniforms):
    n_topics = ndk.shape[0]
    w_list = words.tolist()
    z_list = z.tolist()
    u_list = uniforms.tolist()
    phi_cols = phi.T.tolist()
    counts = ndk.tolist()
    topics = range(n_topics)
    cum = [0.0] * n_topics
    for i in range(len(w_list)):
        col = phi_cols[w_list[i]]
        k = z_list[i]
        counts[k] -= 1
        acc = 0.0
        for j in topics:
            acc = acc + (counts[j] + alpha) * col[j]
            cum[j] = acc
        u = u_list[i] * acc
        k = n_topics - 1
        for j in topics:
            if u < cum[j]:
                k = j
                break
        z_list[i] = k
        counts[k] += 1
    z[:] = z_list
    ndk[:] = counts


def lcs_length(a, b):
    a = list(a)
    b = list(b)
    if not a or not b:
        return 0
    row = [0] * (len(b) + 1)
    for x in a:
        diag = 0
        for j in range(1, len(b) + 1):
            up = row[j]
            if x == b[j - 1]:
                best = diag + 1
            elif row[j - 1] > up:
                best = row[j - 1]
            else:
                best = up
            diag = up
            row[j] = best
    return row[len(b)]
