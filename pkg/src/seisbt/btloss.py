"""Barlow Twins cross-correlation and redundancy-reduction loss with exact gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError

STD_FLOOR = 1e-12
DEFAULT_LAMBDA = 5e-3


@dataclass
class CrossCorrelation:
    C: np.ndarray
    batch_size: int
    mean_a: np.ndarray
    std_a: np.ndarray
    mean_b: np.ndarray
    std_b: np.ndarray
    floored_a: np.ndarray  # columns whose std hit the floor
    floored_b: np.ndarray

    @property
    def degenerate(self) -> bool:
        return bool(self.floored_a.any() or self.floored_b.any())


@dataclass(frozen=True)
class BtLossValue:
    total: float
    invariance_term: float
    redundancy_term: float
    lam: float


def _standardize(z: np.ndarray):
    mu = z.mean(axis=0)
    sd = np.sqrt(((z - mu) ** 2).mean(axis=0))
    floored = sd < STD_FLOOR
    sd = np.where(floored, STD_FLOOR, sd)
    return (z - mu) / sd, mu, sd, floored


def _check_views(zA, zB):
    zA = np.asarray(zA, dtype=np.float64)
    zB = np.asarray(zB, dtype=np.float64)
    if zA.ndim != 2 or zA.shape != zB.shape:
        raise UsageError(f"views must be equal-shape (B, D) arrays, got {zA.shape} and {zB.shape}")
    if zA.shape[0] < 2:
        raise UsageError("cross-correlation needs a batch of at least 2")
    return zA, zB


def cross_correlation(zA, zB) -> CrossCorrelation:
    """Per-column standardized views, C = A_hat^T B_hat / B (population std)."""
    zA, zB = _check_views(zA, zB)
    a, mu_a, sd_a, fa = _standardize(zA)
    b, mu_b, sd_b, fb = _standardize(zB)
    n = zA.shape[0]
    return CrossCorrelation(a.T @ b / n, n, mu_a, sd_a, mu_b, sd_b, fa, fb)


def bt_loss(C, lam: float = DEFAULT_LAMBDA) -> BtLossValue:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise UsageError(f"C must be square, got shape {C.shape}")
    diag = np.diag(C)
    inv = float(((1.0 - diag) ** 2).sum())
    red = float((C**2).sum() - (diag**2).sum())
    return BtLossValue(inv + lam * red, inv, red, lam)


def _standardize_backward(dxhat, xhat, sd, floored):
    n = dxhat.shape[0]
    mean_d = dxhat.mean(axis=0)
    mean_dx = (dxhat * xhat).mean(axis=0)
    dx = (dxhat - mean_d - np.where(floored, 0.0, xhat * mean_dx)) / sd
    return dx


def bt_loss_backward(zA, zB, lam: float = DEFAULT_LAMBDA):
    """Loss value and gradients w.r.t. both views, through the standardization."""
    zA, zB = _check_views(zA, zB)
    a, _, sd_a, fa = _standardize(zA)
    b, _, sd_b, fb = _standardize(zB)
    n = zA.shape[0]
    C = a.T @ b / n
    value = bt_loss(C, lam)
    G = 2.0 * lam * C
    np.fill_diagonal(G, -2.0 * (1.0 - np.diag(C)))
    da_hat = b @ G.T / n
    db_hat = a @ G / n
    return value, _standardize_backward(da_hat, a, sd_a, fa), _standardize_backward(db_hat, b, sd_b, fb)
