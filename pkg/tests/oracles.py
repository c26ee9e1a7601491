"""Independent reference computations used by the tests.

None of these call into the code paths they check.
"""
import numpy as np


def naive_isc(series):
    """ISC of 1-D series from explicit pair loops."""
    N = len(series)
    T = len(series[0])
    c = [np.asarray(s, dtype=float) - np.mean(s) for s in series]
    r_b = 0.0
    for i in range(N):
        for j in range(N):
            if i != j:
                r_b += sum(c[i][t] * c[j][t] for t in range(T)) / (T - 1)
    r_w = sum(sum(c[i][t] ** 2 for t in range(T)) / (T - 1) for i in range(N))
    return r_b / ((N - 1) * r_w)


def block_matrices_by_index(cov_blocks, dims):
    """Assemble R and D entry by entry from global index arithmetic."""
    DN = sum(dims)
    owner, local = [], []
    for v, d in enumerate(dims):
        for c in range(d):
            owner.append(v)
            local.append(c)
    R = np.empty((DN, DN))
    D = np.zeros((DN, DN))
    for p in range(DN):
        for q in range(DN):
            R[p, q] = cov_blocks[owner[p]][owner[q]][local[p], local[q]]
            if owner[p] == owner[q]:
                D[p, q] = R[p, q]
    return R, D


def isc_gradient_ascent(R, D, restarts=50, iters=3000, seed=0):
    """Best Rayleigh quotient v'Rv / v'Dv by projected gradient ascent.

    Each restart starts from a random vector and walks along the gradient
    tangent to the unit-D-norm surface, renormalizing after every step.
    Returns the best quotient and its vector.
    """
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((R.shape[0], restarts))
    scale = np.linalg.norm(R, 2) + np.linalg.norm(D, 2)
    step = 0.5 / scale
    for _ in range(iters):
        V = V / np.sqrt(np.sum(V * (D @ V), axis=0))
        q = np.sum(V * (R @ V), axis=0)
        G = R @ V - (D @ V) * q
        V = V + step * G
    V = V / np.sqrt(np.sum(V * (D @ V), axis=0))
    q = np.sum(V * (R @ V), axis=0)
    best = int(np.argmax(q))
    return float(q[best]), V[:, best]


def finite_difference(f, arrays, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            fp = f()
            a[idx] = old - h
            fm = f()
            a[idx] = old
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


def als_cca_first(A, B, iters=5000, seed=0):
    """First canonical correlation by alternating least squares.

    Alternately regress the current projection of one view on the other
    view; the fixed point is the leading canonical pair.
    """
    rng = np.random.default_rng(seed)
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    b = rng.standard_normal(B.shape[1])
    for _ in range(iters):
        a, *_ = np.linalg.lstsq(A, B @ b, rcond=None)
        a /= np.linalg.norm(A @ a)
        b_new, *_ = np.linalg.lstsq(B, A @ a, rcond=None)
        b_new /= np.linalg.norm(B @ b_new)
        if np.allclose(b_new, b, rtol=0, atol=1e-14):
            b = b_new
            break
        b = b_new
    return float(np.corrcoef(A @ a, B @ b)[0, 1])
