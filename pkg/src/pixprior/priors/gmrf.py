"""Gaussian Markov random field prior on first differences, and its exact MAP solver."""
import numpy as np

from ..errors import NumericError, ParameterError
from ..imaging import dense_matrix


def _diff_adjoint(dh, dv, shape):
    out = np.zeros(shape)
    out[..., :, :-1] -= dh
    out[..., :, 1:] += dh
    out[..., :-1, :] -= dv
    out[..., 1:, :] += dv
    return out


class GaussianMrfPrior:
    """``log p(x) = -x^T Q x / 2`` with ``Q = eps I + L^T L``.

    ``L`` stacks the horizontal and vertical first differences (no wrap-around),
    so ``Q`` is positive definite for any ``eps > 0``. The additive constant is
    dropped.
    """

    patch_size = None

    def __init__(self, epsilon=0.1):
        if not epsilon > 0:
            raise ParameterError("epsilon must be positive")
        self.epsilon = float(epsilon)

    def apply_precision(self, x):
        x = np.asarray(x, dtype=np.float64)
        dh = np.diff(x, axis=-1)
        dv = np.diff(x, axis=-2)
        return self.epsilon * x + _diff_adjoint(dh, dv, x.shape)

    def log_density(self, image):
        x = np.asarray(image, dtype=np.float64)
        val = -0.5 * np.sum(x * self.apply_precision(x), axis=(-2, -1))
        return float(val) if x.ndim == 2 else val

    def value_and_grad(self, image):
        x = np.asarray(image, dtype=np.float64)
        qx = self.apply_precision(x)
        val = -0.5 * np.sum(x * qx, axis=(-2, -1))
        return (float(val) if x.ndim == 2 else val), -qx

    def grad_log_density(self, image):
        return -self.apply_precision(image)

    def precision_matrix(self, shape):
        """Dense ``Q`` for an ``(H, W)`` image vectorized row-major."""
        h, w = shape
        dh = np.diff(np.eye(w), axis=0)
        dv = np.diff(np.eye(h), axis=0)
        lh = np.kron(np.eye(h), dh)
        lv = np.kron(dv, np.eye(w))
        return self.epsilon * np.eye(h * w) + lh.T @ lh + lv.T @ lv


MAX_ORACLE_UNKNOWNS = 1024
SOLVE_TOL = 1e-10


def _solve(a, b, what):
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericError(f"{what} system is singular (condition number {cond:.3e})")
    x = np.linalg.solve(a, b)
    rel = np.linalg.norm(a @ x - b) / max(np.linalg.norm(b), 1e-300)
    if rel > SOLVE_TOL and np.linalg.norm(b) > 0:
        raise NumericError(f"{what} solve residual {rel:.3e} exceeds {SOLVE_TOL:g} (condition number {cond:.3e})")
    return x


def gaussian_mrf_map_oracle(op, y, prior, image_shape, mode="hard", soft_weight=None):
    """Exact MAP estimate of a single-channel image under ``GaussianMrfPrior``.

    Args:
        op: any single-channel operator from :mod:`pixprior.imaging`.
        y: its measurement (array in the operator's layout).
        prior (GaussianMrfPrior): the prior.
        image_shape (tuple): ``(H, W)``.
        mode (str): ``"hard"`` minimises ``x^T Q x`` subject to ``A x = y``
            through the KKT system; ``"soft"`` minimises
            ``x^T Q x / 2 + soft_weight * ||y - A x||^2``.

    Returns:
        ndarray of shape ``image_shape``.
    """
    image_shape = tuple(image_shape)
    n = image_shape[0] * image_shape[1]
    if n > MAX_ORACLE_UNKNOWNS:
        raise ParameterError(f"oracle limited to {MAX_ORACLE_UNKNOWNS} unknowns, got {n}")
    a = dense_matrix(op, image_shape)
    yv = op.measurement_vector(y)
    q = prior.precision_matrix(image_shape)
    if mode == "hard":
        m = a.shape[0]
        kkt = np.block([[q, a.T], [a, np.zeros((m, m))]])
        rhs = np.concatenate([np.zeros(n), yv])
        x = _solve(kkt, rhs, "KKT")[:n]
    elif mode == "soft":
        if soft_weight is None or not soft_weight > 0:
            raise ParameterError("soft mode needs a positive soft_weight")
        lhs = q + 2.0 * soft_weight * a.T @ a
        x = _solve(lhs, 2.0 * soft_weight * a.T @ yv, "normal-equation")
    else:
        raise ParameterError(f"unknown oracle mode {mode!r}")
    return x.reshape(image_shape)
