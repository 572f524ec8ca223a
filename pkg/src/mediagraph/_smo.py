"""Sequential minimal optimization over a precomputed kernel matrix.

Dual form: minimize 1/2 a^T Q a - e^T a subject to y^T a = 0, 0 <= a <= C,
with Q_ij = y_i y_j K_ij.  Each step picks the working pair by maximal KKT
violation with a second-order refinement for the partner index, updates the
two multipliers in closed form, and maintains the dual gradient
incrementally.  The loop stops when the maximal violation drops below
``tol``, which bounds every margin's KKT slack by tol.  Fully
deterministic: ties resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TAU = 1e-12  # floor for non-positive-definite pair curvature


@njit(cache=True)
def smo_solve(K, y, C, tol, max_iter):
    """Solve the soft-margin dual; returns (alpha, b, converged).

    K is the training kernel matrix, y the labels in {-1, +1}.  The decision
    function is sum_j alpha_j y_j K[j, x] + b.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    it = 0
    gmax = 0.0
    gmin = 0.0
    while it < max_iter:
        # i: most violating index among the "up" set
        i = -1
        gmax = -np.inf
        for t in range(n):
            if (y[t] > 0.0 and alpha[t] < C) or (y[t] < 0.0 and alpha[t] > 0.0):
                v = -y[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        # j: best second-order decrease among the "low" set
        j = -1
        gmin = np.inf
        best_dec = 0.0
        if i >= 0:
            for t in range(n):
                if (y[t] > 0.0 and alpha[t] > 0.0) or (y[t] < 0.0 and alpha[t] < C):
                    v = -y[t] * grad[t]
                    if v < gmin:
                        gmin = v
                    b_it = gmax - v
                    if b_it > 0.0:
                        a_it = K[i, i] + K[t, t] - 2.0 * y[i] * y[t] * K[i, t]
                        if a_it <= 0.0:
                            a_it = TAU
                        dec = -(b_it * b_it) / a_it
                        if dec < best_dec:
                            best_dec = dec
                            j = t
        if i < 0 or j < 0 or gmax - gmin <= tol:
            break

        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * yi * yj * K[i, j]
        if quad <= 0.0:
            quad = TAU
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0.0:
                if aj < 0.0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = -diff
            if diff > 0.0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            else:
                if aj < 0.0:
                    aj = 0.0
                    ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            else:
                if ai < 0.0:
                    ai = 0.0
                    aj = total
        d_i = (ai - ai_old) * yi
        d_j = (aj - aj_old) * yj
        for t in range(n):
            grad[t] += y[t] * (K[t, i] * d_i + K[t, j] * d_j)
        alpha[i] = ai
        alpha[j] = aj
        it += 1

    # threshold: average -y*grad over free vectors, else the violation midpoint
    n_free = 0
    sum_free = 0.0
    for t in range(n):
        if 0.0 < alpha[t] < C:
            n_free += 1
            sum_free += -y[t] * grad[t]
    if n_free > 0:
        b = sum_free / n_free
    else:
        b = 0.5 * (gmax + gmin)
    return alpha, b, it < max_iter
