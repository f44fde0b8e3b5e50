"""Fisher information and the CFO Cramer-Rao bound for the sign model.

The log-likelihood of y = sgn(D h + w) is sum_i log Phi(y_i d_i^T h / sigma_w).
Its expected curvature factors as J = M^T Lambda M with M = [Ddot h, D] and
Lambda = diag(phi_i); the CFO bound is the inverse Schur complement that
removes the channel block.

Because D = M_B kron I_{n_r} (with M_B the realified B^T), every receive
antenna contributes an independent block: J_hh is block diagonal in a
per-antenna column ordering. The computation below exploits that, so a trial
at paper scale costs small matrix products instead of a dense
(2 n_r n_p) x (2 n_r n_t) sandwich; the dense path remains available through
:func:`phi_weights` / :func:`d_dot` and is pinned to this one by the tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import log_ndtr

from .model import (
    TWO_PI,
    ParameterError,
    TrainingBlock,
    apply_cfo,
    realify_complex_matrix,
    vandermonde,
)

logger = logging.getLogger(__name__)


class DegenerateInformationError(RuntimeError):
    """The channel-nuisance Fisher block is singular beyond repair."""


@dataclass(frozen=True)
class FisherPieces:
    """Blocks of the joint (omega, h) Fisher information matrix."""

    j_ww: float
    j_wh: np.ndarray
    j_hh: np.ndarray
    lambda_diag: np.ndarray


def _phi_from_projection(projection: np.ndarray, sigma_w_sq: float) -> np.ndarray:
    """phi_i for projections d_i^T h; log-domain Phi keeps large |u| finite."""
    if sigma_w_sq <= 0:
        raise ParameterError("sigma_w_sq must be > 0")
    u = np.asarray(projection, dtype=np.float64) / np.sqrt(sigma_w_sq)
    u_sq = u * u
    total = np.exp(-u_sq - log_ndtr(u)) + np.exp(-u_sq - log_ndtr(-u))
    return total / (2.0 * np.pi * sigma_w_sq)


def phi_weights(d_matrix: np.ndarray, h: np.ndarray, sigma_w_sq: float) -> np.ndarray:
    """Per-measurement Fisher weights phi_i; strictly positive."""
    return _phi_from_projection(np.asarray(d_matrix) @ np.asarray(h), sigma_w_sq)


def _b_dot(training: TrainingBlock, cfo_rad: float) -> np.ndarray:
    ramp = 1j * np.arange(training.n_p) * vandermonde(cfo_rad, training.n_p)
    return training.entries * ramp[np.newaxis, :]


def d_dot(training: TrainingBlock, cfo_rad: float, n_r: int) -> np.ndarray:
    """Dense dD/domega, same shape as D; the symbol index enters as a factor."""
    return np.kron(realify_complex_matrix(_b_dot(training, cfo_rad).T), np.eye(n_r))


def fim(training: TrainingBlock, cfo_rad: float, h: np.ndarray, sigma_w_sq: float,
        n_r: int) -> FisherPieces:
    """Fisher blocks J_ww, J_wh, J_hh and the phi weights for one instance."""
    n_t, n_p = training.n_t, training.n_p
    h = np.asarray(h, dtype=np.float64)
    if h.size != 2 * n_r * n_t:
        raise ParameterError(f"h length {h.size} != 2 * n_r * n_t = {2 * n_r * n_t}")

    m_b = realify_complex_matrix(apply_cfo(training, cfo_rad).T)   # (2 n_p, 2 n_t)
    m_dot = realify_complex_matrix(_b_dot(training, cfo_rad).T)

    # Per-antenna layout: column j*n_r + r of D pairs with h_stack[r, j].
    h_stack = h.reshape(2 * n_t, n_r).T                            # (n_r, 2 n_t)
    dh = h_stack @ m_b.T                                           # (n_r, 2 n_p)
    dh_dot = h_stack @ m_dot.T
    phi = _phi_from_projection(dh, sigma_w_sq)                     # (n_r, 2 n_p)

    j_ww = float(np.sum(phi * dh_dot**2))
    j_wh = ((phi * dh_dot) @ m_b).T.reshape(-1)                    # index j*n_r + r

    n = 2 * n_r * n_t
    j_hh = np.zeros((n, n))
    col_index = np.arange(2 * n_t) * n_r
    for r in range(n_r):
        block = m_b.T @ (phi[r][:, np.newaxis] * m_b)
        idx = col_index + r
        j_hh[np.ix_(idx, idx)] = block

    lambda_diag = phi.T.reshape(-1)                                # index q*n_r + r
    return FisherPieces(j_ww=j_ww, j_wh=j_wh, j_hh=j_hh, lambda_diag=lambda_diag)


def crb_cfo(pieces: FisherPieces, ridge_scale: float = 1e-12) -> float:
    """Schur-complement bound CRB = 1 / (J_ww - J_wh J_hh^{-1} J_hw).

    A relative ridge is added to J_hh when the symmetric factorization fails
    (or yields a nonpositive Schur complement); events are logged.
    """
    j_hh = pieces.j_hh
    n = j_hh.shape[0]
    ridge = ridge_scale * np.trace(j_hh) / n

    def schur_with(matrix: np.ndarray) -> float:
        factor = scipy.linalg.cho_factor(matrix, check_finite=False)
        solved = scipy.linalg.cho_solve(factor, pieces.j_wh, check_finite=False)
        return float(pieces.j_ww - pieces.j_wh @ solved)

    try:
        schur = schur_with(j_hh)
        if not np.isfinite(schur) or schur <= 0:
            raise np.linalg.LinAlgError("nonpositive Schur complement")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        logger.warning("J_hh factorization needed a ridge of %.3e", ridge)
        try:
            schur = schur_with(j_hh + ridge * np.eye(n))
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise DegenerateInformationError("J_hh singular even after ridge") from exc
        if not np.isfinite(schur) or schur <= 0:
            raise DegenerateInformationError("no usable CFO information in the FIM")
    return 1.0 / schur


def crb_for_instance(training: TrainingBlock, cfo_rad: float, h: np.ndarray,
                     sigma_w_sq: float, n_r: int) -> float:
    """Convenience wrapper: FIM plus Schur complement in one call."""
    return crb_cfo(fim(training, cfo_rad, h, sigma_w_sq, n_r))
