import math

import numpy as np

from muonbench.harness import EvalRow

__all__ = [
    'constant_stream',
    'gd_stream',
    'gram_inverse_sqrt',
    'naive_matmul',
    'scalar_adamw',
]


def naive_matmul(a, b):
    '''
    Triple-loop matrix product, accumulated left to right.
    '''
    m, k = len(a), len(a[0])
    n = len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            total = 0.0
            for p in range(k):
                total += float(a[i][p]) * float(b[p][j])
            out[i][j] = total
    return np.array(out)


def gram_inverse_sqrt(m):
    '''
    M (M^T M)^{-1/2} through a symmetric eigendecomposition.
    '''
    vals, vecs = np.linalg.eigh(m.T @ m)
    return m @ (vecs * vals ** -0.5) @ vecs.T


def scalar_adamw(w, grads, eta, weight_decay=0.0, beta1=0.9, beta2=0.999,
                 eps=1e-8):
    '''
    AdamW on a single scalar, written out with plain floats. Returns the
    trajectory of w after each gradient in ``grads``.
    '''
    m = 0.0
    v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w = w - eta * weight_decay * w - eta * m_hat / (math.sqrt(v_hat) + eps)
        out.append(w)
    return out


def gd_stream(task, eta, steps):
    '''
    Eval rows of plain full-batch gradient descent on a quadratic task,
    one row per step.
    '''
    w = np.zeros(task.param_shape)
    rows = []
    for t in range(1, steps + 1):
        loss, g = task.objective({'w': w})
        w = w - eta * g['w']
        loss, g = task.objective({'w': w})
        rows.append(EvalRow(step=t, tokens_seen=t, train_loss=loss, val_loss=loss,
                            grad_global_norm=float(np.linalg.norm(g['w'])),
                            update_rms=0.0, eta_t=eta))
    return rows


def constant_stream(steps, norm=1.0):
    return [EvalRow(step=t, tokens_seen=t, train_loss=1.0, val_loss=1.0,
                    grad_global_norm=norm, update_rms=0.0, eta_t=0.0)
            for t in range(1, steps + 1)]
