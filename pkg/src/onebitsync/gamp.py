"""Stage 2: channel estimation from y = sgn(A x + w) via GAMP with EM.

Sum-product GAMP with scalar (uniform) variances, damped, plus an outer EM
loop that learns the prior hyperparameters: the Gaussian variance for the
general channel (x = h, A = D) and the Bernoulli-Gaussian sparsity/variance
for the mmWave beamspace channel (x = c, A = D_c).

All denoisers are scalar and real; the realified model keeps real and
imaginary parts independent with equal variance, so nothing complex-circular
is lost. The probit ratio phi(eta)/Phi(eta) is evaluated through erfcx,
which is stable for arbitrarily negative eta.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfcx, expit

from .channels import dft_unitary
from .model import (
    DimensionError,
    ParameterError,
    RealifiedOperator,
    TrainingBlock,
    apply_cfo,
    unstack,
    unvec,
)

HYPER_MIN = 1e-12
HYPER_MAX = 1e12


def _inv_mills(eta: np.ndarray) -> np.ndarray:
    """phi(eta) / Phi(eta), numerically stable for all eta."""
    return np.sqrt(2.0 / np.pi) / erfcx(-np.asarray(eta, dtype=np.float64) / np.sqrt(2.0))


# ---------------------------------------------------------------------------
# Scalar denoisers
# ---------------------------------------------------------------------------

def output_denoiser_sign(p_hat, tau_p, y, sigma_w_sq):
    """Moments of z ~ N(p_hat, tau_p) given y = sgn(z + w), w ~ N(0, sigma_w_sq).

    Returns (z_hat, z_var) with 0 <= z_var <= tau_p. tau_p may be 0, in which
    case the input is returned untouched.
    """
    if sigma_w_sq <= 0:
        raise ParameterError("sigma_w_sq must be > 0")
    p_hat = np.asarray(p_hat, dtype=np.float64)
    tau_p = np.asarray(tau_p, dtype=np.float64)
    if np.any(tau_p < 0):
        raise ParameterError("tau_p must be >= 0")
    total = tau_p + sigma_w_sq
    denom = np.sqrt(total)
    eta = y * p_hat / denom
    rho = _inv_mills(eta)
    z_hat = p_hat + y * tau_p * rho / denom
    z_var = np.clip(tau_p - tau_p**2 * rho * (eta + rho) / total, 0.0, tau_p)
    return z_hat, z_var


def output_denoiser_identity(p_hat, tau_p, y, sigma_w_sq):
    """Moments of z ~ N(p_hat, tau_p) given the unquantized y = z + w."""
    gain = tau_p / (tau_p + sigma_w_sq)
    return p_hat + gain * (y - p_hat), tau_p * sigma_w_sq / (tau_p + sigma_w_sq)


def input_denoiser_gaussian(r_hat, tau_r, sigma_x_sq):
    """Conjugate update for x ~ N(0, sigma_x_sq) observed as r = x + N(0, tau_r)."""
    r_hat = np.asarray(r_hat, dtype=np.float64)
    gain = sigma_x_sq / (sigma_x_sq + tau_r)
    return gain * r_hat, np.broadcast_to(gain * tau_r, r_hat.shape).copy()


def _bg_slab_moments(r_hat, tau_r, active_var):
    m = active_var * r_hat / (active_var + tau_r)
    v = active_var * tau_r / (active_var + tau_r)
    return m, v


def input_denoiser_bg(r_hat, tau_r, sparsity, active_var):
    """Spike-and-slab moments for x ~ (1-lam) delta_0 + lam N(0, active_var).

    Returns (x_hat, x_var, support_prob) where support_prob is the posterior
    probability that the component is active.
    """
    if not (0 < sparsity <= 1):
        raise ParameterError(f"sparsity must lie in (0, 1], got {sparsity}")
    r_hat = np.asarray(r_hat, dtype=np.float64)
    m, v = _bg_slab_moments(r_hat, tau_r, active_var)
    if sparsity == 1.0:
        pi = np.ones_like(r_hat)
    else:
        # log N(r; 0, active_var + tau_r) - log N(r; 0, tau_r), then a sigmoid
        total = active_var + tau_r
        log_ratio = 0.5 * (np.log(tau_r / total) + r_hat**2 * (1.0 / tau_r - 1.0 / total))
        pi = expit(np.log(sparsity / (1.0 - sparsity)) + log_ratio)
    x_hat = pi * m
    x_var = np.maximum(pi * (m**2 + v) - x_hat**2, 0.0)
    return x_hat, x_var, pi


# ---------------------------------------------------------------------------
# Prior hyperparameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianPrior:
    """x_j ~ N(0, sigma_x_sq); EM learns the variance."""

    sigma_x_sq: float = 1.0

    def __post_init__(self) -> None:
        if self.sigma_x_sq <= 0:
            raise ParameterError("sigma_x_sq must be > 0")

    @property
    def typical_variance(self) -> float:
        return self.sigma_x_sq

    def posterior(self, r_hat, tau_r):
        return input_denoiser_gaussian(r_hat, tau_r, self.sigma_x_sq)

    def em_updated(self, r_hat, tau_r) -> "GaussianPrior":
        x_hat, x_var = self.posterior(r_hat, tau_r)
        return GaussianPrior(float(np.clip(np.mean(x_hat**2 + x_var), HYPER_MIN, HYPER_MAX)))

    def hyper_vector(self) -> np.ndarray:
        return np.array([self.sigma_x_sq])


@dataclass(frozen=True)
class BernoulliGaussianPrior:
    """x_j ~ (1 - sparsity) delta_0 + sparsity N(0, active_var).

    ``active_mean`` is kept in the record for model fidelity but only the
    centered slab is supported.
    """

    sparsity: float = 0.1
    active_var: float = 1.0
    active_mean: float = 0.0

    def __post_init__(self) -> None:
        if not (0 < self.sparsity <= 1):
            raise ParameterError(f"sparsity must lie in (0, 1], got {self.sparsity}")
        if self.active_var <= 0:
            raise ParameterError("active_var must be > 0")
        if self.active_mean != 0.0:
            raise ParameterError("only a zero-mean slab is supported")

    @property
    def typical_variance(self) -> float:
        return self.sparsity * self.active_var

    def posterior(self, r_hat, tau_r):
        return input_denoiser_bg(r_hat, tau_r, self.sparsity, self.active_var)[:2]

    def em_updated(self, r_hat, tau_r) -> "BernoulliGaussianPrior":
        _, _, pi = input_denoiser_bg(r_hat, tau_r, self.sparsity, self.active_var)
        m, v = _bg_slab_moments(np.asarray(r_hat, dtype=np.float64), tau_r, self.active_var)
        mass = max(float(np.sum(pi)), np.finfo(float).tiny)
        lam = float(np.clip(np.mean(pi), HYPER_MIN, 1.0))
        active_var = float(np.clip(np.sum(pi * (m**2 + v)) / mass, HYPER_MIN, HYPER_MAX))
        return BernoulliGaussianPrior(lam, active_var)

    def hyper_vector(self) -> np.ndarray:
        return np.array([self.sparsity, self.active_var])


def em_update(prior, r_hat, tau_r):
    """One EM pass on the prior hyperparameters from GAMP's (r_hat, tau_r)."""
    return prior.em_updated(r_hat, tau_r)


# ---------------------------------------------------------------------------
# GAMP driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GampConfig:
    max_iters: int = 50
    damping: float = 0.7
    tol: float = 1e-6
    variance_floor: float = 1e-12
    em_enabled: bool = True
    em_max_iters: int = 20
    em_tol: float = 1e-4
    divergence_factor: float = 1e6
    trace_file: str | None = None

    def __post_init__(self) -> None:
        if not (0 < self.damping <= 1):
            raise ParameterError("damping must lie in (0, 1]")
        if self.tol <= 0 or self.variance_floor <= 0:
            raise ParameterError("tol and variance_floor must be > 0")
        if self.max_iters < 1 or self.em_max_iters < 1:
            raise ParameterError("iteration caps must be >= 1")


@dataclass
class ChannelEstimate:
    """Posterior summary returned by the GAMP solver."""

    x_hat: np.ndarray
    x_var: np.ndarray
    learned_hyperparams: object
    iterations_used: int
    converged: bool
    diverged: bool = False
    em_passes: int = 1
    r_hat: np.ndarray | None = None
    tau_r: float = np.nan
    s_hat: np.ndarray | None = None


_OUTPUT_CHANNELS = {"sign": output_denoiser_sign, "identity": output_denoiser_identity}


def _operator_parts(a):
    if hasattr(a, "matvec") and hasattr(a, "rmatvec"):
        if not hasattr(a, "fro_norm_sq"):
            raise ParameterError("operator inputs must expose fro_norm_sq")
        return tuple(a.shape), a.matvec, a.rmatvec, float(a.fro_norm_sq)
    dense = np.asarray(a, dtype=np.float64)
    if dense.ndim != 2:
        raise DimensionError("A must be a 2-D matrix or a linear operator")
    return dense.shape, (lambda x: dense @ x), (lambda s: dense.T @ s), float(np.sum(dense * dense))


def gamp_solve(a, y, sigma_w_sq, prior, config: GampConfig = GampConfig(),
               output_channel: str = "sign", x_init=None, s_init=None,
               tau_x_init=None, trace: list | None = None, em_pass: int = 0) -> ChannelEstimate:
    """Run the damped scalar-variance GAMP recursion to convergence.

    ``a`` is a dense matrix or any operator exposing matvec / rmatvec /
    shape / fro_norm_sq. The prior hyperparameters stay fixed here; the EM
    loop lives in :func:`gamp_em_solve`.
    """
    (m, n), matvec, rmatvec, fro2 = _operator_parts(a)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (m,):
        raise DimensionError(f"y length {y.size} != rows of A ({m})")
    denoise_out = _OUTPUT_CHANNELS[output_channel]
    floor = config.variance_floor
    beta = config.damping

    a2m = fro2 / m
    a2n = fro2 / n
    x = np.zeros(n) if x_init is None else np.array(x_init, dtype=np.float64)
    s = np.zeros(m) if s_init is None else np.array(s_init, dtype=np.float64)
    tau_x = float(prior.typical_variance if tau_x_init is None else tau_x_init)
    init_scale = max(np.sqrt(n * prior.typical_variance), 1e-30)

    x_var = np.full(n, tau_x)
    r_hat, tau_r = x.copy(), np.inf
    best = (np.inf, x.copy(), x_var.copy())
    converged = diverged = False
    iteration = 0

    for iteration in range(1, config.max_iters + 1):
        tau_p = max(a2m * tau_x, floor)
        p_hat = matvec(x) - tau_p * s
        z_hat, z_var = denoise_out(p_hat, tau_p, y, sigma_w_sq)
        s_new = (z_hat - p_hat) / tau_p
        tau_s = max((1.0 - float(np.mean(z_var)) / tau_p) / tau_p, floor)
        s = (1.0 - beta) * s + beta * s_new

        tau_r = max(1.0 / (a2n * tau_s), floor)
        r_hat = x + tau_r * rmatvec(s)
        x_new, x_var = prior.posterior(r_hat, tau_r)[:2]
        x_prev = x
        x = (1.0 - beta) * x_prev + beta * x_new
        tau_x = max(float(np.mean(x_var)), floor)

        norm_x = float(np.linalg.norm(x))
        residual = float(np.linalg.norm(x - x_prev)) / max(norm_x, 1e-30)
        if trace is not None:
            trace.append(
                {"em_pass": em_pass, "iteration": iteration, "residual": residual,
                 "tau_x": tau_x, **_hyper_columns(prior)}
            )
        if norm_x > config.divergence_factor * init_scale:
            diverged = True
            _, x, x_var = best
            break
        if residual < best[0]:
            best = (residual, x.copy(), x_var.copy())
        if residual < config.tol:
            converged = True
            break

    return ChannelEstimate(
        x_hat=x, x_var=np.maximum(x_var, 0.0), learned_hyperparams=prior,
        iterations_used=iteration, converged=converged, diverged=diverged,
        r_hat=r_hat, tau_r=tau_r, s_hat=s,
    )


def _hyper_columns(prior) -> dict:
    if isinstance(prior, GaussianPrior):
        return {"sigma_x_sq": prior.sigma_x_sq}
    return {"sparsity": prior.sparsity, "active_var": prior.active_var}


def _hyper_rel_change(old, new) -> float:
    a, b = old.hyper_vector(), new.hyper_vector()
    return float(np.max(np.abs(b - a) / np.maximum(np.abs(a), HYPER_MIN)))


def gamp_em_solve(a, y, sigma_w_sq, prior, config: GampConfig = GampConfig(),
                  output_channel: str = "sign") -> ChannelEstimate:
    """Alternate GAMP and EM hyperparameter updates until both settle.

    Later passes warm-start from the previous GAMP state, so the inner loops
    shorten as the hyperparameters converge.
    """
    trace: list | None = [] if config.trace_file else None
    current = prior
    x = s = tau_x = None
    total_iters = 0
    result = None
    passes = config.em_max_iters if config.em_enabled else 1
    for em_pass in range(passes):
        result = gamp_solve(
            a, y, sigma_w_sq, current, config, output_channel,
            x_init=x, s_init=s, tau_x_init=tau_x, trace=trace, em_pass=em_pass,
        )
        total_iters += result.iterations_used
        x, s = result.x_hat, result.s_hat
        tau_x = float(np.mean(result.x_var))
        if result.diverged or not config.em_enabled:
            break
        updated = em_update(current, result.r_hat, result.tau_r)
        change = _hyper_rel_change(current, updated)
        current = updated
        if change < config.em_tol:
            break
    if trace is not None:
        _write_trace(config.trace_file, trace)
    return replace(result, learned_hyperparams=current, iterations_used=total_iters,
                   em_passes=em_pass + 1)


def _write_trace(path, rows) -> None:
    if not rows:
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Channel-level entry point
# ---------------------------------------------------------------------------

@dataclass
class ChannelEstimateResult:
    """GAMP output reassembled into complex channel matrices."""

    estimate: ChannelEstimate
    h_hat: np.ndarray
    c_hat: np.ndarray | None = None


def _default_bg_prior(m: int, fro2: float, sparsity: float = 0.1) -> BernoulliGaussianPrior:
    # Calibrate the total prior power so E||A x||^2 ~ m (unit power per
    # measurement), a neutral starting point that EM then adapts.
    return BernoulliGaussianPrior(sparsity, max(m / (sparsity * fro2), HYPER_MIN))


def estimate_channel(training: TrainingBlock, y, omega_hat: float, sigma_w_sq: float,
                     channel_family: str, config: GampConfig = GampConfig(),
                     prior_init=None, dense_operator: bool = False) -> ChannelEstimateResult:
    """Stage-2 estimator: build A from (T, omega_hat), run GAMP-EM, reassemble.

    ``channel_family`` selects the model: "gaussian" estimates h directly
    through A = D(omega_hat) with a Gaussian prior; "mmwave" estimates the
    beamspace coefficients through A = D_c(omega_hat) with a
    Bernoulli-Gaussian prior and also returns the antenna-domain view
    H = U_r C U_t^H.
    """
    y = np.asarray(y, dtype=np.float64)
    n_p = training.n_p
    n_t = training.n_t
    if y.size % (2 * n_p):
        raise DimensionError("y length must be 2 * n_r * n_p")
    n_r = y.size // (2 * n_p)
    b = apply_cfo(training, omega_hat)

    if channel_family == "gaussian":
        op = RealifiedOperator(b, n_r)
        prior = GaussianPrior(1.0) if prior_init is None else prior_init
    elif channel_family == "mmwave":
        u_t = dft_unitary(n_t)
        op = RealifiedOperator(u_t.conj().T @ b, n_r, left=dft_unitary(n_r))
        prior = _default_bg_prior(y.size, op.fro_norm_sq) if prior_init is None else prior_init
    else:
        raise ParameterError(f"unknown channel family {channel_family!r}")

    a = op.to_dense() if dense_operator else op
    result = gamp_em_solve(a, y, sigma_w_sq, prior, config)
    estimated = unvec(unstack(result.x_hat), (n_r, n_t))

    if channel_family == "gaussian":
        return ChannelEstimateResult(estimate=result, h_hat=estimated)
    h_hat = dft_unitary(n_r) @ estimated @ dft_unitary(n_t).conj().T
    return ChannelEstimateResult(estimate=result, h_hat=h_hat, c_hat=estimated)
