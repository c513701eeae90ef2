"""Kernel densities over surface features, SE(3) x R^2.

A kernel is the product of an isotropic 3-variate Gaussian on position, an
antipodally symmetric von Mises-Fisher density on the unit quaternion, and an
isotropic 2-variate Gaussian on the curvature pair. Mixtures accumulate in log
space so products of many small factors never underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ive, logsumexp

from .cloud import SurfaceFeature
from .geom import Pose, canonical_quat

LOG_2PI = np.log(2.0 * np.pi)
_CHUNK = 1 << 22  # query x kernel elements per evaluation block


@dataclass(frozen=True)
class Bandwidths:
    """Kernel widths: position (m), rotation concentration kappa, curvature (1/m)."""

    sigma_p: float = 0.01
    kappa: float = 100.0
    sigma_r: float = 10.0

    def __post_init__(self):
        for name in ("sigma_p", "kappa", "sigma_r"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"bandwidth {name} must be finite and > 0, got {v}")

    def as_list(self):
        return [self.sigma_p, self.kappa, self.sigma_r]


# ------------------------------------------------------------ base kernels

def log_gaussian(x, mu, sigma: float, dim: int | None = None):
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    dim = x.shape[-1] if dim is None else dim
    sq = np.sum((x - mu) ** 2, axis=-1)
    return -0.5 * sq / sigma**2 - 0.5 * dim * (LOG_2PI + 2.0 * np.log(sigma))


def gaussian_eval(x, mu, sigma: float, dim: int | None = None) -> float:
    """Isotropic ``dim``-variate normal density, normalizer included."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    if dim is not None and x.shape[-1] != dim:
        raise ValueError(f"expected {dim}-vectors, got shape {x.shape}")
    return np.exp(log_gaussian(x, mu, sigma, dim))


def log_vmf_normalizer(kappa: float) -> float:
    """log C4(kappa) for the von Mises-Fisher density on S^3 (surface area 2 pi^2).

    ``C4 = kappa / (4 pi^2 I_1(kappa))``; ``ive`` keeps large kappa finite.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return float(np.log(kappa) - np.log(4.0 * np.pi**2) - (np.log(ive(1, kappa)) + kappa))


def _log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)


def log_vmf_antipodal(q, mu, kappa: float, log_norm: float | None = None):
    d = np.sum(np.asarray(q, dtype=float) * np.asarray(mu, dtype=float), axis=-1)
    if log_norm is None:
        log_norm = log_vmf_normalizer(kappa)
    return log_norm + _log_cosh(kappa * d)


def vmf_antipodal_eval(q, mu, kappa: float):
    """Antipodal vMF pair ``C4 (e^{k<q,mu>} + e^{-k<q,mu>}) / 2``; symmetric under q -> -q."""
    return np.exp(log_vmf_antipodal(q, mu, kappa))


def sample_vmf(mu, kappa: float, n: int, rng) -> np.ndarray:
    """Draw ``n`` unit quaternions from vMF(mu, kappa) on S^3 (Wood, 1994)."""
    mu = np.asarray(mu, dtype=float)
    mu = mu / np.linalg.norm(mu)
    p = 4
    b = (p - 1) / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + (p - 1) ** 2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (p - 1) * np.log(1.0 - x0 * x0)
    w = np.empty(n)
    todo = np.arange(n)
    while len(todo):
        m = len(todo)
        z = rng.beta((p - 1) / 2.0, (p - 1) / 2.0, size=m)
        cand = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        ok = kappa * cand + (p - 1) * np.log(1.0 - x0 * cand) - c >= np.log(u)
        w[todo[ok]] = cand[ok]
        todo = todo[~ok]
    v = rng.standard_normal((n, p))
    v -= (v @ mu)[:, None] * mu
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return w[:, None] * mu + np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v


# ----------------------------------------------------------------- mixtures

@dataclass(frozen=True)
class FeatureKernel:
    mean: SurfaceFeature
    weight: float


class MixtureDensity:
    """Weighted kernels over (position, quaternion, curvature) with shared bandwidths.

    Kernel means are held as parallel arrays; weights must sum to one.
    """

    def __init__(self, positions, quats, curvatures, weights, bandwidths: Bandwidths):
        self.positions = np.array(positions, dtype=float).reshape(-1, 3)
        self.quats = canonical_quat(np.array(quats, dtype=float).reshape(-1, 4))
        self.curvatures = np.array(curvatures, dtype=float).reshape(-1, 2)
        self.weights = np.array(weights, dtype=float).reshape(-1)
        self.bandwidths = bandwidths
        n = len(self.positions)
        if n == 0:
            raise ValueError("mixture needs at least one kernel")
        if not (len(self.quats) == len(self.curvatures) == len(self.weights) == n):
            raise ValueError("kernel arrays have mismatched lengths")
        if np.any(self.weights < 0):
            raise ValueError("kernel weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"kernel weights sum to {self.weights.sum()!r}, not 1")
        for a in (self.positions, self.quats, self.curvatures, self.weights):
            a.setflags(write=False)
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(self.weights)

    @classmethod
    def from_features(cls, features, bandwidths: Bandwidths, weights=None) -> "MixtureDensity":
        features = list(features)
        if not features:
            raise ValueError("mixture needs at least one feature")
        if weights is None:
            weights = np.full(len(features), 1.0 / len(features))
        else:
            weights = np.asarray(weights, dtype=float)
            weights = weights / weights.sum()
        return cls(
            np.array([f.pose.p for f in features]),
            np.array([f.pose.q for f in features]),
            np.array([f.r for f in features]),
            weights,
            bandwidths,
        )

    def __len__(self):
        return len(self.weights)

    @property
    def kernels(self) -> list[FeatureKernel]:
        return [
            FeatureKernel(SurfaceFeature(Pose(p, q), r), float(w))
            for p, q, r, w in zip(self.positions, self.quats, self.curvatures, self.weights)
        ]

    def logpdf(self, positions, quats, curvatures) -> np.ndarray:
        """Log density at a batch of features given as parallel arrays."""
        return mixture_logpdf_arrays(
            self.positions, self.quats, self.curvatures, self.log_weights, self.bandwidths,
            positions, quats, curvatures)

    def curvature_logpdf(self, curvatures) -> np.ndarray:
        r = np.asarray(curvatures, dtype=float).reshape(-1, 2)
        lk = log_gaussian(r[:, None, :], self.curvatures[None], self.bandwidths.sigma_r, 2)
        return logsumexp(lk + self.log_weights, axis=1)


def pairwise_log_kernel(positions, quats, curvatures, mu_p, mu_q, mu_r, bw: Bandwidths):
    """``log K`` for every (query, kernel) pair; ``curvatures=None`` drops the curvature factor."""
    positions = np.asarray(positions, dtype=float)
    out = log_gaussian(positions[:, None, :], mu_p[None], bw.sigma_p, 3)
    if quats is not None:
        out = out + log_vmf_antipodal(np.asarray(quats, dtype=float)[:, None, :], mu_q[None], bw.kappa)
    if curvatures is not None:
        out = out + log_gaussian(np.asarray(curvatures, dtype=float)[:, None, :], mu_r[None], bw.sigma_r, 2)
    return out


def mixture_logpdf_arrays(mu_p, mu_q, mu_r, log_w, bw, positions, quats, curvatures):
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    quats = None if quats is None else np.asarray(quats, dtype=float).reshape(-1, 4)
    curvatures = None if curvatures is None else np.asarray(curvatures, dtype=float).reshape(-1, 2)
    n = len(positions)
    out = np.empty(n)
    step = max(1, _CHUNK // max(len(log_w), 1))
    for s in range(0, n, step):
        sl = slice(s, s + step)
        lk = pairwise_log_kernel(
            positions[sl], None if quats is None else quats[sl],
            None if curvatures is None else curvatures[sl], mu_p, mu_q, mu_r, bw)
        out[sl] = logsumexp(lk + log_w, axis=1)
    return out


def kernel_eval(s: SurfaceFeature, kernel: FeatureKernel, bw: Bandwidths) -> float:
    """Unweighted kernel value ``N3(p) Theta(q) N2(r)`` at feature ``s``."""
    m = kernel.mean
    return float(
        gaussian_eval(s.pose.p, m.pose.p, bw.sigma_p, 3)
        * vmf_antipodal_eval(s.pose.q, m.pose.q, bw.kappa)
        * gaussian_eval(s.r, m.r, bw.sigma_r, 2)
    )


def mixture_eval(d: MixtureDensity, s: SurfaceFeature) -> float:
    return float(np.exp(d.logpdf(s.pose.p[None], s.pose.q[None], s.r[None])[0]))


def marginal_curvature_eval(d: MixtureDensity, r) -> float:
    """Curvature marginal ``sum_i w_i N2(r | r_i, sigma_r)``; pose integrates out."""
    return float(np.exp(d.curvature_logpdf(np.asarray(r, dtype=float).reshape(1, 2))[0]))


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mixture_sample_arrays(d: MixtureDensity, n: int, seed=None):
    """Draw ``n`` features; returns ``(positions, quats, curvatures, kernel_indices)``."""
    rng = _as_rng(seed)
    bw = d.bandwidths
    comp = rng.choice(len(d), size=n, p=d.weights)
    pos = d.positions[comp] + bw.sigma_p * rng.standard_normal((n, 3))
    quats = np.empty((n, 4))
    for c in np.unique(comp):
        sel = np.flatnonzero(comp == c)
        quats[sel] = sample_vmf(d.quats[c], bw.kappa, len(sel), rng)
    curv = d.curvatures[comp] + bw.sigma_r * rng.standard_normal((n, 2))
    return pos, canonical_quat(quats), curv, comp


def mixture_sample(d: MixtureDensity, seed=None) -> SurfaceFeature:
    pos, quats, curv, _ = mixture_sample_arrays(d, 1, seed)
    return SurfaceFeature(Pose(pos[0], quats[0]), curv[0])
