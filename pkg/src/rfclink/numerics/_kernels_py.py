"""Pure numpy kernels; fallback for the compiled ``_kernels`` extension.

Gate layout along the last axis of the projections is
``[update | reset | candidate]``:

    z = sigmoid(a_z + h U_z)
    r = sigmoid(a_r + h U_r)
    n = tanh(a_n + (r * h) U_n)
    h' = (1 - z) * n + z * h
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(a, u):
    m, h3 = a.shape
    H = h3 // 3
    uz, ur, un = u[:, :H], u[:, H:2 * H], u[:, 2 * H:]
    states = np.zeros((m, H), dtype=a.dtype)
    # per step: z, r, n, and the pre-candidate product r*h
    gates = np.zeros((m, 4, H), dtype=a.dtype)
    h = np.zeros(H, dtype=a.dtype)
    for t in range(m):
        z = _sigmoid(a[t, :H] + h @ uz)
        r = _sigmoid(a[t, H:2 * H] + h @ ur)
        rh = r * h
        n = np.tanh(a[t, 2 * H:] + rh @ un)
        h = (1.0 - z) * n + z * h
        states[t] = h
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = z, r, n, rh
    return states, gates


def gru_backward(a, u, states, gates, g):
    m, h3 = a.shape
    H = h3 // 3
    uz, ur, un = u[:, :H], u[:, H:2 * H], u[:, 2 * H:]
    da = np.zeros_like(a)
    du = np.zeros_like(u)
    dh = np.zeros(H, dtype=a.dtype)
    for t in range(m - 1, -1, -1):
        z, r, n, rh = gates[t]
        h_prev = states[t - 1] if t > 0 else np.zeros(H, dtype=a.dtype)
        dh = dh + g[t]
        dn = dh * (1.0 - z) * (1.0 - n * n)
        dz = dh * (h_prev - n) * z * (1.0 - z)
        drh = un @ dn
        dr = drh * h_prev * r * (1.0 - r)
        da[t, :H] = dz
        da[t, H:2 * H] = dr
        da[t, 2 * H:] = dn
        du[:, :H] += np.outer(h_prev, dz)
        du[:, H:2 * H] += np.outer(h_prev, dr)
        du[:, 2 * H:] += np.outer(rh, dn)
        dh = dh * z + drh * r + uz @ dz + ur @ dr
    return da, du


def adam_update(p, g, m, v, lr, b1, b2, eps, c1, c2):
    """One Adam step on flat arrays, in place."""
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    p -= (lr / c1) * m / (np.sqrt(v * (1.0 / c2)) + eps)
