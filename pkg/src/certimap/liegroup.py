"""SO(3)/SE(3) algebra with first-order uncertainty propagation.

Twists are ordered translation first, ``[rho; phi]``. Uncertain transforms use
a right perturbation: ``T = T_hat * Exp(tau)`` with ``tau ~ N(0, Sigma)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

_SMALL_ANGLE = 1e-6
_NEAR_PI = 1e-2
_ELLIPSOID_EPS = 1e-12


def hat3(phi):
    """Skew matrix such that ``hat3(a) @ b == cross(a, b)``. Accepts (3,) or (n, 3)."""
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(phi.shape[:-1] + (3, 3))
    x, y, z = phi[..., 0], phi[..., 1], phi[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee3(m):
    m = np.asarray(m, dtype=float)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def is_rotation(R, tol=1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (np.linalg.norm(R @ R.T - np.eye(3)) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Transform:
    """Rigid transform acting as ``p -> R p + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "Transform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "Transform":
        return inverse(self)

    def __matmul__(self, other):
        if isinstance(other, Transform):
            return compose(self, other)
        return act(self, other)


def compose(a: Transform, b: Transform) -> Transform:
    return Transform(a.R @ b.R, a.R @ b.t + a.t)


def inverse(T: Transform) -> Transform:
    Rt = T.R.T
    return Transform(Rt, -Rt @ T.t)


def act(T: Transform, p):
    """Apply ``T`` to a point (3,) or a batch of points (n, 3)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return T.R @ p + T.t
    return p @ T.R.T + T.t


def exp_so3(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta2 = float(phi @ phi)
    theta = np.sqrt(theta2)
    K = hat3(phi)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * K + b * (K @ K)


def log_so3(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = vee3(R - R.T)  # 2 sin(theta) axis
    s = 0.5 * np.linalg.norm(w)
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta < _SMALL_ANGLE:
        # theta / (2 sin theta) ~ 1/2 + theta^2/12
        return (0.5 + theta * theta / 12.0) * w
    if np.pi - theta < _NEAR_PI:
        # symmetric part is cos(theta) I + (1 - cos(theta)) a a^T
        B = 0.5 * (R + R.T) - c * np.eye(3)
        i = int(np.argmax(np.diag(B)))
        axis = B[:, i] / np.sqrt(B[i, i] * (1.0 - c))
        axis /= np.linalg.norm(axis)
        if axis @ w < 0.0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * s) * w


def _left_jacobian_coeffs(theta):
    theta2 = theta * theta
    if theta < _SMALL_ANGLE:
        return 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0
    return ((1.0 - np.cos(theta)) / theta2,
            (theta - np.sin(theta)) / (theta2 * theta))


def left_jacobian_so3(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    b, c = _left_jacobian_coeffs(theta)
    K = hat3(phi)
    return np.eye(3) + b * K + c * (K @ K)


def left_jacobian_inv_so3(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    K = hat3(phi)
    if theta < 1e-4:
        # 1/12 + theta^2/720 + theta^4/30240
        t2 = theta * theta
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        d = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / (theta * theta)
    return np.eye(3) - 0.5 * K + d * (K @ K)


def exp_se3(xi) -> Transform:
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return Transform(exp_so3(phi), left_jacobian_so3(phi) @ rho)


def log_se3(T: Transform) -> np.ndarray:
    phi = log_so3(T.R)
    rho = left_jacobian_inv_so3(phi) @ T.t
    return np.concatenate([rho, phi])


def adjoint(T: Transform) -> np.ndarray:
    Ad = np.zeros((6, 6))
    Ad[:3, :3] = T.R
    Ad[:3, 3:] = hat3(T.t) @ T.R
    Ad[3:, 3:] = T.R
    return Ad


def point_jacobian(T_hat: Transform, p_source) -> np.ndarray:
    """Derivative of ``T_hat * Exp(xi) * p`` with respect to ``xi`` at zero."""
    p = np.asarray(p_source, dtype=float).reshape(3)
    return np.hstack([T_hat.R, -T_hat.R @ hat3(p)])


def _check_covariance(S, tol=1e-12) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.shape != (6, 6):
        raise ValueError(f"covariance must be 6x6, got {S.shape}")
    if np.linalg.norm(S - S.T) > tol * max(1.0, np.linalg.norm(S)):
        raise ValueError("covariance is not symmetric")
    return S


@dataclass(frozen=True)
class UncertainTransform:
    mean: Transform
    covariance: np.ndarray

    def __post_init__(self):
        S = _check_covariance(self.covariance).copy()
        if np.linalg.eigvalsh(S)[0] < -1e-12 * max(1.0, np.abs(S).max()):
            raise ValueError("covariance has a negative eigenvalue")
        S.flags.writeable = False
        object.__setattr__(self, "covariance", S)

    @classmethod
    def exact(cls, T: Transform) -> "UncertainTransform":
        return cls(T, np.zeros((6, 6)))


@dataclass(frozen=True)
class Ellipsoid:
    """Set ``{p : (p - c)^T shape^-1 (p - c) <= 1}``."""

    center: np.ndarray
    shape: np.ndarray

    def _regularized(self):
        S = 0.5 * (self.shape + self.shape.T)
        if np.linalg.eigvalsh(S)[0] <= _ELLIPSOID_EPS:
            S = S + _ELLIPSOID_EPS * np.eye(3)
        return S

    def mahalanobis2(self, p) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        L = np.linalg.cholesky(self._regularized())
        z = np.linalg.solve(L, (p - self.center).T)
        return np.sum(z * z, axis=0)

    def contains(self, p):
        m = self.mahalanobis2(p) <= 1.0
        return bool(m[0]) if np.ndim(p) == 1 else m


def point_covariance(ut: UncertainTransform, p_source, kappa: float) -> Ellipsoid:
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    J = point_jacobian(ut.mean, p_source)
    shape = kappa * J @ ut.covariance @ J.T
    return Ellipsoid(act(ut.mean, np.asarray(p_source, dtype=float)), 0.5 * (shape + shape.T))


def psd_factor(Sigma) -> np.ndarray:
    """Return F with ``F F^T = Sigma`` for a PSD matrix (eigen route, rank-safe)."""
    S = np.asarray(Sigma, dtype=float)
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def as_generator(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_twists(Sigma, n: int, rng_seed) -> np.ndarray:
    rng = as_generator(rng_seed)
    F = psd_factor(Sigma)
    z = rng.standard_normal((n, 6))
    return z @ F.T


def sample_perturbed(T_true: Transform, Sigma, rng_seed) -> Transform:
    """Draw ``T_true * Exp(tau)``, ``tau ~ N(0, Sigma)``."""
    tau = sample_twists(Sigma, 1, rng_seed)[0]
    return compose(T_true, exp_se3(tau))


def spd_sqrt(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > 1e-9 * scale:
        raise ValueError("spd_sqrt needs a symmetric matrix")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.size and w[0] < -1e-12 * max(1.0, scale):
        raise ValueError("spd_sqrt needs a positive semidefinite matrix")
    S = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (S + S.T)


def psd_repair(M) -> np.ndarray:
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    w, V = np.linalg.eigh(M)
    out = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (out + out.T)


def cross_covariance(Sigma_a, Sigma_b, rho: float) -> np.ndarray:
    """Correlated cross term ``rho * (Sigma_a Sigma_b^T)^(1/2)``.

    When the product is not symmetric its square root is taken as the product
    of the individual symmetric roots.
    """
    if np.array_equal(Sigma_a, Sigma_b):
        # (S S^T)^(1/2) of a symmetric PSD matrix is the matrix itself
        return rho * np.asarray(Sigma_a, dtype=float)
    P = Sigma_a @ Sigma_b.T
    if np.linalg.norm(P - P.T) <= 1e-9 * max(np.linalg.norm(P), 1e-300):
        return rho * spd_sqrt(0.5 * (P + P.T))
    return rho * spd_sqrt(Sigma_a) @ spd_sqrt(Sigma_b)


def extract_relative_covariance(odom_k: UncertainTransform, odom_k1: UncertainTransform,
                                rho: float) -> UncertainTransform:
    """Relative transform ``B_{k+1} -> B_k`` between two poses sharing a base frame."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    for S in (odom_k.covariance, odom_k1.covariance):
        if np.linalg.eigvalsh(S)[0] < -1e-9:
            raise ValueError("input covariance is not positive semidefinite")
    same = (np.array_equal(odom_k.mean.R, odom_k1.mean.R)
            and np.array_equal(odom_k.mean.t, odom_k1.mean.t))
    rel = Transform.identity() if same else compose(inverse(odom_k.mean), odom_k1.mean)
    A = adjoint(inverse(rel))
    Sk, Sk1 = odom_k.covariance, odom_k1.covariance
    X = cross_covariance(Sk, Sk1, rho)
    S = A @ Sk @ A.T + Sk1 - A @ X - X.T @ A.T
    return UncertainTransform(rel, psd_repair(S))


def kappa_from_probability(p: float, dof: int = 3) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    return float(chi2.ppf(p, dof))
