"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``MONOPLANT_JIT`` is not set to ``0``.  Both paths share the same
signatures so callers never branch on the backend.
"""
import os

import numpy as np

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_JIT = HAS_NUMBA and os.environ.get("MONOPLANT_JIT", "1").strip().lower() not in ("0", "false", "no", "off")

_JIT_OPTS = dict(cache=True, nogil=True, fastmath=False)


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def sigmoid_np(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_grad_np(z):
    s = sigmoid_np(z)
    return s * (1.0 - s)


def ptrelu_np(z, alpha, beta):
    z = np.asarray(z, dtype=np.float64)
    return np.minimum(alpha * sigmoid_np(beta * z), np.maximum(z, 0.0))


def ptrelu_grad_np(z, alpha, beta):
    z = np.asarray(z, dtype=np.float64)
    s = sigmoid_np(beta * z)
    relu = np.maximum(z, 0.0)
    cap = alpha * s
    # ties resolve to the max(0, x) branch
    relu_branch = np.where(z > 0, 1.0, 0.0)
    return np.where(relu <= cap, relu_branch, alpha * beta * s * (1.0 - s))


def gd_cubic_np(r, y, p_rated, gamma, theta, lr, momentum, max_iter, tol):
    """Heavy-ball descent on (1/2m)||y - P phi(r) theta||^2 + gamma ||theta||^2."""
    m = r.shape[0]
    phi = np.stack([np.ones_like(r), r, r * r, r * r * r], axis=1)
    theta = theta.copy()
    vel = np.zeros(4)
    it = 0
    for it in range(1, max_iter + 1):
        resid = y - p_rated * (phi @ theta)
        grad = -(p_rated / m) * (phi.T @ resid) + 2.0 * gamma * theta
        vel = momentum * vel - lr * grad
        theta = theta + vel
        if np.max(np.abs(vel)) < tol:
            break
    return theta, it


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(**_JIT_OPTS)
    def _sigmoid_scalar(z):
        if z >= 0.0:
            return 1.0 / (1.0 + np.exp(-z))
        e = np.exp(z)
        return e / (1.0 + e)

    @numba.njit(**_JIT_OPTS)
    def _sigmoid_flat(z):
        out = np.empty_like(z)
        for i in range(z.size):
            out[i] = _sigmoid_scalar(z[i])
        return out

    @numba.njit(**_JIT_OPTS)
    def _sigmoid_grad_flat(z):
        out = np.empty_like(z)
        for i in range(z.size):
            s = _sigmoid_scalar(z[i])
            out[i] = s * (1.0 - s)
        return out

    @numba.njit(**_JIT_OPTS)
    def _ptrelu_flat(z, alpha, beta):
        out = np.empty_like(z)
        for i in range(z.size):
            cap = alpha * _sigmoid_scalar(beta * z[i])
            relu = z[i] if z[i] > 0.0 else 0.0
            out[i] = cap if cap < relu else relu
        return out

    @numba.njit(**_JIT_OPTS)
    def _ptrelu_grad_flat(z, alpha, beta):
        out = np.empty_like(z)
        for i in range(z.size):
            s = _sigmoid_scalar(beta * z[i])
            relu = z[i] if z[i] > 0.0 else 0.0
            if relu <= alpha * s:
                out[i] = 1.0 if z[i] > 0.0 else 0.0
            else:
                out[i] = alpha * beta * s * (1.0 - s)
        return out

    @numba.njit(**_JIT_OPTS)
    def gd_cubic_nb(r, y, p_rated, gamma, theta, lr, momentum, max_iter, tol):
        m = r.shape[0]
        th = theta.copy()
        vel = np.zeros(4)
        grad = np.zeros(4)
        it = 0
        for it in range(1, max_iter + 1):
            for j in range(4):
                grad[j] = 2.0 * gamma * th[j]
            for i in range(m):
                ri = r[i]
                pred = p_rated * (th[0] + ri * (th[1] + ri * (th[2] + ri * th[3])))
                c = -(p_rated / m) * (y[i] - pred)
                grad[0] += c
                grad[1] += c * ri
                grad[2] += c * ri * ri
                grad[3] += c * ri * ri * ri
            step = 0.0
            for j in range(4):
                vel[j] = momentum * vel[j] - lr * grad[j]
                th[j] += vel[j]
                if abs(vel[j]) > step:
                    step = abs(vel[j])
            if step < tol:
                break
        return th, it


def _flat_call(kernel, z, *args):
    z = np.asarray(z, dtype=np.float64)
    flat = np.ascontiguousarray(z.ravel())
    return kernel(flat, *args).reshape(z.shape)


def sigmoid(z):
    if USE_JIT:
        return _flat_call(_sigmoid_flat, z)
    return sigmoid_np(z)


def sigmoid_grad(z):
    if USE_JIT:
        return _flat_call(_sigmoid_grad_flat, z)
    return sigmoid_grad_np(z)


def ptrelu(z, alpha, beta):
    if USE_JIT:
        return _flat_call(_ptrelu_flat, z, float(alpha), float(beta))
    return ptrelu_np(z, alpha, beta)


def ptrelu_grad(z, alpha, beta):
    if USE_JIT:
        return _flat_call(_ptrelu_grad_flat, z, float(alpha), float(beta))
    return ptrelu_grad_np(z, alpha, beta)


def gd_cubic(r, y, p_rated, gamma, theta, lr, momentum, max_iter, tol):
    r = np.ascontiguousarray(r, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    fn = gd_cubic_nb if USE_JIT else gd_cubic_np
    th, it = fn(r, y, float(p_rated), float(gamma), theta, float(lr), float(momentum), int(max_iter), float(tol))
    return np.asarray(th), int(it)


def backend():
    return "numba" if USE_JIT else "numpy"
