"""Stage 1: CFO estimation from one-bit observations.

The estimate maximizes the matched-filter energy of the Bussgang-linearized
model, S(omega) = ||G(omega)^T y||^2, over the scalar offset. For iid QPSK
training the row normalization in G is constant, so the objective collapses
to S(omega) = ||D(omega)^T y||^2 (the default fast path). The search runs in
three steps: a coarse grid, a refined grid around the coarse peak, and a
gradient ascent with backtracking line search.

Evaluation detail: S is computed through the exact complex identity
``D^T y = [Re; Im] vec(Y B(omega)^H)``, which avoids materializing D for
every candidate omega. :func:`objective` agrees with the dense-matrix
definition to machine precision (see the tests).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (
    DimensionError,
    ParameterError,
    TWO_PI,
    TrainingBlock,
    build_d_matrix,
    unstack,
    unvec,
)


@dataclass(frozen=True)
class CfoSearchConfig:
    """Grid sizes and line-search knobs for the three-step search."""

    n1: int = 300
    n2: int = 10
    refine_max_iters: int = 100
    refine_grad_tol: float = 1e-10
    step_initial: float | None = None  # defaults to 2*pi / (n1 * n2 * 10)
    step_shrink: float = 0.5
    step_sufficient_increase: float = 1e-4

    def __post_init__(self) -> None:
        if self.n1 < 2 or self.n2 < 1:
            raise ParameterError("need n1 >= 2 and n2 >= 1")
        if self.refine_grad_tol <= 0 or not (0 < self.step_shrink < 1):
            raise ParameterError("tolerances must be positive and shrink in (0, 1)")
        if self.step_initial is not None and self.step_initial <= 0:
            raise ParameterError("step_initial must be positive")

    @property
    def initial_step(self) -> float:
        if self.step_initial is not None:
            return self.step_initial
        return TWO_PI / (self.n1 * self.n2 * 10)

    @property
    def coarse_grid(self) -> np.ndarray:
        return TWO_PI * np.arange(self.n1) / self.n1

    def refined_grid(self, omega_coarse: float) -> np.ndarray:
        offsets = np.arange(-(self.n2 - 1), self.n2) * (TWO_PI / (self.n1 * self.n2))
        return (omega_coarse + offsets) % TWO_PI


@dataclass(frozen=True)
class CfoEstimate:
    """Search output; the ascent chain S(final) >= S(refined) >= S(coarse) holds."""

    omega_coarse: float
    omega_refined: float
    omega_final: float
    objective_at_final: float
    iterations_used: int


def _infer_n_r(y: np.ndarray, n_p: int) -> int:
    if y.ndim != 1 or y.size % (2 * n_p):
        raise DimensionError(f"y length {y.size} is not a multiple of 2 * n_p = {2 * n_p}")
    return y.size // (2 * n_p)


class ObjectiveEvaluator:
    """Evaluates S(omega) and dS/domega for one observation vector.

    The observation enters as the (possibly row-weighted) complex matrix Y;
    each candidate costs one small complex matrix product.
    """

    def __init__(self, y, training: TrainingBlock, sigma_h_sq=None, sigma_w_sq=None,
                 qpsk_fast_path: bool = True):
        y = np.asarray(y, dtype=np.float64)
        n_p = training.n_p
        n_r = _infer_n_r(y, n_p)
        y_mat = unvec(unstack(y), (n_r, n_p))
        self.scale = 1.0
        if not qpsk_fast_path:
            if sigma_h_sq is None or sigma_w_sq is None:
                raise ParameterError("general path needs sigma_h_sq and sigma_w_sq")
            weights = cz_diagonal_per_symbol(training, sigma_h_sq, sigma_w_sq) ** -0.5
            y_mat = y_mat * weights[np.newaxis, :]
            self.scale = 2.0 / np.pi
        self._y_mat = y_mat
        self._t_conj = training.entries.conj().T  # (n_p, n_t)
        self._symbol_index = np.arange(n_p)

    def value(self, omega: float) -> float:
        rotated = self._y_mat * np.exp(-1j * omega * self._symbol_index)
        v = rotated @ self._t_conj
        return self.scale * float(np.vdot(v, v).real)

    def value_and_grad(self, omega: float) -> tuple[float, float]:
        rotated = self._y_mat * np.exp(-1j * omega * self._symbol_index)
        v = rotated @ self._t_conj
        v_dot = (rotated * (-1j * self._symbol_index)) @ self._t_conj
        value = self.scale * float(np.vdot(v, v).real)
        grad = 2.0 * self.scale * float(np.vdot(v, v_dot).real)
        return value, grad

    def grid_values(self, omegas: np.ndarray) -> np.ndarray:
        return np.asarray([self.value(w) for w in omegas])


def cz_diagonal_per_symbol(training: TrainingBlock, sigma_h_sq: float, sigma_w_sq: float) -> np.ndarray:
    """Per-symbol diagonal of C_z = D C_h D^T + C_w under C_h = sigma_h_sq I.

    The full diagonal repeats each returned value across the receive antennas
    and across the Re/Im halves; it never forms C_z itself. Phase rotation
    keeps the column norms of B equal to those of T, so the result does not
    depend on the CFO candidate.
    """
    if sigma_h_sq <= 0 or sigma_w_sq <= 0:
        raise ParameterError("variances must be > 0")
    return sigma_h_sq * training.column_norms_sq + sigma_w_sq


def cz_diagonal(training: TrainingBlock, sigma_h_sq: float, sigma_w_sq: float, n_r: int) -> np.ndarray:
    """Full diagonal of C_z, ordered like the rows of D."""
    per_symbol = cz_diagonal_per_symbol(training, sigma_h_sq, sigma_w_sq)
    half = np.repeat(per_symbol, n_r)
    return np.concatenate([half, half])


def bussgang_matrix(training: TrainingBlock, cfo_candidate: float, sigma_h_sq: float,
                    sigma_w_sq: float, n_r: int) -> np.ndarray:
    """Linearization matrix G = sqrt(2/pi) diag(diag(C_z)^{-1/2}) D(omega)."""
    d = build_d_matrix(training, cfo_candidate, n_r)
    inv_sqrt = cz_diagonal(training, sigma_h_sq, sigma_w_sq, n_r) ** -0.5
    return np.sqrt(2.0 / np.pi) * inv_sqrt[:, np.newaxis] * d


def objective(y, training: TrainingBlock, cfo_candidate: float, sigma_h_sq=None,
              sigma_w_sq=None, qpsk_fast_path: bool = True) -> float:
    """Matched-filter energy S(omega): ||D^T y||^2 (fast path) or ||G^T y||^2."""
    return ObjectiveEvaluator(y, training, sigma_h_sq, sigma_w_sq, qpsk_fast_path).value(cfo_candidate)


def objective_gradient(y, training: TrainingBlock, cfo_candidate: float) -> float:
    """Analytic dS/domega = 2 y^T D Ddot^T y for the QPSK fast-path objective."""
    return ObjectiveEvaluator(y, training).value_and_grad(cfo_candidate)[1]


def detect(y, training: TrainingBlock, config: CfoSearchConfig = CfoSearchConfig(),
           sigma_h_sq=None, sigma_w_sq=None, qpsk_fast_path: bool = True) -> tuple[float, float]:
    """Two-step grid detection; returns (omega_coarse, omega_refined).

    Grid argmax ties resolve to the lowest index.
    """
    evaluator = ObjectiveEvaluator(y, training, sigma_h_sq, sigma_w_sq, qpsk_fast_path)
    coarse = config.coarse_grid
    omega_coarse = float(coarse[np.argmax(evaluator.grid_values(coarse))])
    refined = config.refined_grid(omega_coarse)
    omega_refined = float(refined[np.argmax(evaluator.grid_values(refined))])
    return omega_coarse, omega_refined


def _ascend(evaluator: ObjectiveEvaluator, omega_start: float, config: CfoSearchConfig) -> tuple[float, float, int]:
    """Backtracking (Armijo) gradient ascent on S; monotone by construction.

    The line search warm-starts from the previous accepted step, and the
    ascent stops once an accepted move no longer changes S beyond float
    resolution (the gradient tolerance is unreachable exactly at the peak).
    """
    eps = np.finfo(float).eps
    omega = float(omega_start)
    s_cur = evaluator.value(omega)
    iterations = 0
    last_step = config.initial_step
    for _ in range(config.refine_max_iters):
        s_cur, grad = evaluator.value_and_grad(omega)
        if abs(grad) <= config.refine_grad_tol * max(abs(s_cur), np.finfo(float).tiny):
            break
        direction = 1.0 if grad > 0 else -1.0
        step = min(config.initial_step, 4.0 * last_step)
        accepted = False
        improvement = 0.0
        while step > 1e-15:
            candidate = omega + direction * step
            s_try = evaluator.value(candidate)
            if s_try >= s_cur + config.step_sufficient_increase * step * abs(grad):
                improvement = s_try - s_cur
                omega, s_cur, accepted, last_step = candidate, s_try, True, step
                break
            step *= config.step_shrink
        iterations += 1
        if not accepted or improvement <= 8.0 * eps * abs(s_cur):
            break
    return omega % TWO_PI, s_cur, iterations


def refine(y, training: TrainingBlock, omega_start: float,
           config: CfoSearchConfig = CfoSearchConfig()) -> CfoEstimate:
    """Gradient refinement from a detection estimate.

    The coarse/refined fields both carry ``omega_start``; use
    :func:`estimate_cfo` for the full three-step record.
    """
    evaluator = ObjectiveEvaluator(y, training)
    omega, s_final, iterations = _ascend(evaluator, omega_start, config)
    start = float(omega_start) % TWO_PI
    return CfoEstimate(start, start, omega, s_final, iterations)


def estimate_cfo(y, training: TrainingBlock, config: CfoSearchConfig = CfoSearchConfig(),
                 sigma_h_sq=None, sigma_w_sq=None, qpsk_fast_path: bool = True) -> CfoEstimate:
    """Full stage-1 pipeline: coarse grid, refined grid, gradient ascent."""
    omega_coarse, omega_refined = detect(y, training, config, sigma_h_sq, sigma_w_sq, qpsk_fast_path)
    estimate = refine(y, training, omega_refined, config)
    return replace(estimate, omega_coarse=omega_coarse, omega_refined=omega_refined)


def wrap_angle_error(omega_hat: float, omega_true: float) -> float:
    """Angular estimation error wrapped into [-pi, pi)."""
    return float((omega_hat - omega_true + np.pi) % TWO_PI - np.pi)
