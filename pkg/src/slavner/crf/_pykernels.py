"""Pure numpy CRF kernels, used when the compiled extension is unavailable."""

import numpy as np


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def path_score(em, tr, st, en, tags):
    score = st[tags[0]] + em[0, tags[0]]
    for t in range(1, len(tags)):
        score = score + tr[tags[t - 1], tags[t]]
        score = score + em[t, tags[t]]
    return float(score + en[tags[-1]])


def _forward(em, tr, st):
    T, L = em.shape
    alpha = np.empty((T, L))
    alpha[0] = st + em[0]
    for t in range(1, T):
        alpha[t] = _lse(alpha[t - 1][:, None] + tr, axis=0) + em[t]
    return alpha


def log_partition(em, tr, st, en):
    alpha = _forward(em, tr, st)
    return float(_lse(alpha[-1] + en, axis=0))


def nll_grad(em, tr, st, en, tags):
    T, L = em.shape
    alpha = _forward(em, tr, st)
    logz = _lse(alpha[-1] + en, axis=0)
    beta = np.empty((T, L))
    beta[-1] = en
    for t in range(T - 2, -1, -1):
        beta[t] = _lse(tr + (em[t + 1] + beta[t + 1])[None, :], axis=1)

    g_em = np.exp(alpha + beta - logz)
    g_st = g_em[0].copy()
    g_en = g_em[-1].copy()
    g_tr = np.zeros((L, L))
    for t in range(T - 1):
        g_tr += np.exp(alpha[t][:, None] + tr + (em[t + 1] + beta[t + 1])[None, :] - logz)

    idx = np.arange(T)
    g_em[idx, tags] -= 1.0
    g_st[tags[0]] -= 1.0
    g_en[tags[-1]] -= 1.0
    np.add.at(g_tr, (tags[:-1], tags[1:]), -1.0)
    return float(logz) - path_score(em, tr, st, en, tags), g_em, g_tr, g_st, g_en


def viterbi(em, tr, st, en):
    T, L = em.shape
    delta = st + em[0]
    back = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + tr
        # argmax returns the first maximum: lowest label index wins ties
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(L)] + em[t]
    final = delta + en
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(final))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(final[path[-1]])
