"""One-bit quantized MIMO observation model and its real-valued equivalent.

The complex observation model is ``Y = csgn(H T diag(a(omega)) + W)``.
Stacking real and imaginary parts turns it into ``y = sgn(D h + w)`` with a
doubled-size real measurement matrix D. Everything downstream (the CFO
metric, GAMP, Fisher information) works on that real form, so the shared
conventions live here:

* ``vec`` stacks columns (column-major), matching the identity
  ``vec(A X B) = (B^T kron A) vec(X)``.
* A complex vector u maps to the real vector ``[Re u; Im u]``.
* Noise is parameterized by the variance per real dimension ``sigma_w_sq``,
  i.e. ``W_ij ~ CN(0, 2 * sigma_w_sq)`` and the real model has
  ``C_w = sigma_w_sq * I``.
* ``sgn(0) = +1``, so quantizer outputs are always exactly +-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class DimensionError(ValueError):
    """An operand's shape is inconsistent with the model dimensions."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


# ---------------------------------------------------------------------------
# Stacking / vectorization helpers
# ---------------------------------------------------------------------------

def vec(matrix: np.ndarray) -> np.ndarray:
    """Column-major vectorization (stacks the columns of ``matrix``)."""
    return np.asarray(matrix).reshape(-1, order="F")


def unvec(vector: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given 2-D shape."""
    return np.asarray(vector).reshape(shape, order="F")


def realstack(u: np.ndarray) -> np.ndarray:
    """Map a complex vector to the stacked real vector [Re u; Im u]."""
    u = np.asarray(u)
    return np.concatenate([u.real, u.imag])


def unstack(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`realstack`; requires even length."""
    x = np.asarray(x)
    if x.size % 2:
        raise DimensionError(f"stacked real vector must have even length, got {x.size}")
    k = x.size // 2
    return x[:k] + 1j * x[k:]


def realify_complex_matrix(f: np.ndarray) -> np.ndarray:
    """Real 2x2-block equivalent [[F_R, -F_I], [F_I, F_R]] of a complex matrix."""
    f = np.asarray(f)
    return np.block([[f.real, -f.imag], [f.imag, f.real]])


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemDims:
    """Antenna counts and training length of one MIMO setup.

    The realified measurement matrix has exactly ``2 * n_r * n_p`` rows and
    ``2 * n_r * n_t`` columns.
    """

    n_t: int
    n_r: int
    n_p: int

    def __post_init__(self) -> None:
        for name in ("n_t", "n_r", "n_p"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")

    @property
    def real_rows(self) -> int:
        return 2 * self.n_r * self.n_p

    @property
    def real_cols(self) -> int:
        return 2 * self.n_r * self.n_t


@dataclass(frozen=True)
class TrainingBlock:
    """Known training matrix T of shape (n_t, n_p).

    QPSK blocks have every entry in {+-1 +- j}, which makes every column
    norm-squared equal to ``2 * n_t`` regardless of the CFO rotation.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.complex128)
        if entries.ndim != 2 or entries.size == 0:
            raise DimensionError("training block must be a nonempty 2-D matrix")
        object.__setattr__(self, "entries", entries)

    @property
    def n_t(self) -> int:
        return self.entries.shape[0]

    @property
    def n_p(self) -> int:
        return self.entries.shape[1]

    @property
    def column_norms_sq(self) -> np.ndarray:
        return np.sum(self.entries.real**2 + self.entries.imag**2, axis=0)

    def is_qpsk(self) -> bool:
        return bool(
            np.all(np.abs(self.entries.real) == 1.0)
            and np.all(np.abs(self.entries.imag) == 1.0)
        )

    @classmethod
    def random_qpsk(cls, n_t: int, n_p: int, rng) -> "TrainingBlock":
        """Draw an iid QPSK block with entries in {+-1 +- j}."""
        rng = np.random.default_rng(rng)
        re = 2.0 * rng.integers(0, 2, size=(n_t, n_p)) - 1.0
        im = 2.0 * rng.integers(0, 2, size=(n_t, n_p)) - 1.0
        return cls(re + 1j * im)


@dataclass(frozen=True)
class ComplexModelInstance:
    """Ground-truth generative state of one trial.

    ``noise_var_per_dim`` is the variance of the real part (and of the
    imaginary part) of each noise entry, so ``W_ij ~ CN(0, 2 * noise_var)``.
    ``cfo_rad`` is wrapped into [0, 2*pi) at construction.
    """

    dims: SystemDims
    training: TrainingBlock
    channel: np.ndarray
    cfo_rad: float
    noise_var_per_dim: float

    def __post_init__(self) -> None:
        if self.noise_var_per_dim <= 0:
            raise ParameterError(f"noise variance must be > 0, got {self.noise_var_per_dim}")
        channel = np.asarray(self.channel, dtype=np.complex128)
        if channel.shape != (self.dims.n_r, self.dims.n_t):
            raise DimensionError(
                f"channel shape {channel.shape} != ({self.dims.n_r}, {self.dims.n_t})"
            )
        if (self.training.n_t, self.training.n_p) != (self.dims.n_t, self.dims.n_p):
            raise DimensionError("training block shape inconsistent with dims")
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "cfo_rad", float(self.cfo_rad) % TWO_PI)


@dataclass(frozen=True)
class RealifiedModel:
    """Real-valued equivalent model y = sgn(D h + w), C_w = noise_var * I."""

    d_matrix: np.ndarray
    y: np.ndarray
    noise_var: float

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64)
        if not np.all(np.abs(y) == 1.0):
            raise ParameterError("y must contain only +-1 entries")
        if y.size != self.d_matrix.shape[0]:
            raise DimensionError("y length does not match the rows of D")
        object.__setattr__(self, "y", y)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def vandermonde(theta: float, n: int) -> np.ndarray:
    """Phase-ramp vector [1, e^{j theta}, ..., e^{j (n-1) theta}]."""
    if n < 1:
        raise DimensionError(f"vandermonde length must be >= 1, got {n}")
    return np.exp(1j * theta * np.arange(n))


def _sign_pm1(x: np.ndarray) -> np.ndarray:
    # sgn(0) = +1 by convention (includes -0.0, which compares >= 0)
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def csgn(z):
    """Elementwise complex sign: sgn(Re z) + j sgn(Im z), with sgn(0) = +1."""
    z = np.asarray(z)
    out = _sign_pm1(z.real) + 1j * _sign_pm1(z.imag)
    return out[()] if out.ndim == 0 else out


def apply_cfo(training: TrainingBlock, cfo_rad: float) -> np.ndarray:
    """Rotated block B = T diag(a(cfo)); column i is scaled by e^{j(i-1) cfo}."""
    return training.entries * vandermonde(cfo_rad, training.n_p)[np.newaxis, :]


def simulate_observation(inst: ComplexModelInstance, rng_seed) -> np.ndarray:
    """One-bit observation Y = csgn(H B + W), deterministic given the seed."""
    rng = np.random.default_rng(rng_seed)
    shape = (inst.dims.n_r, inst.dims.n_p)
    sigma = np.sqrt(inst.noise_var_per_dim)
    noise = sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return csgn(inst.channel @ apply_cfo(inst.training, inst.cfo_rad) + noise)


def build_d_matrix(training: TrainingBlock, cfo_rad: float, n_r: int) -> np.ndarray:
    """Dense realified measurement matrix D(omega) of shape (2 n_r n_p, 2 n_r n_t).

    D = [[B_R^T, -B_I^T], [B_I^T, B_R^T]] kron I_{n_r}, which coincides with
    the realification of F = B^T kron I_{n_r}.
    """
    if n_r < 1:
        raise DimensionError(f"n_r must be >= 1, got {n_r}")
    b = apply_cfo(training, cfo_rad)
    return np.kron(realify_complex_matrix(b.T), np.eye(n_r))


def realify(inst: ComplexModelInstance, observation: np.ndarray) -> RealifiedModel:
    """Realified model of one trial: D from (T, omega), y = [Re vec(Y); Im vec(Y)]."""
    observation = np.asarray(observation)
    if observation.shape != (inst.dims.n_r, inst.dims.n_p):
        raise DimensionError(
            f"observation shape {observation.shape} != ({inst.dims.n_r}, {inst.dims.n_p})"
        )
    d = build_d_matrix(inst.training, inst.cfo_rad, inst.dims.n_r)
    return RealifiedModel(d_matrix=d, y=realstack(vec(observation)), noise_var=inst.noise_var_per_dim)


class RealifiedOperator:
    """Matrix-free application of a realified measurement matrix.

    Represents the realification of ``F = B^T kron L`` where B is an
    (n_t, n_p) complex block and L is an (n_r, n_r) complex left factor
    (identity when ``left`` is None, the receive-side DFT for beamspace
    models). ``matvec``/``rmatvec`` produce exactly the same numbers as the
    dense matrix from :meth:`to_dense` while touching only small complex
    matrix products (``vec(A X B)`` identities), which is what makes the
    simulation sweeps affordable.
    """

    def __init__(self, b_matrix: np.ndarray, n_r: int, left: np.ndarray | None = None):
        self.b = np.asarray(b_matrix, dtype=np.complex128)
        if self.b.ndim != 2:
            raise DimensionError("b_matrix must be 2-D")
        self.n_t, self.n_p = self.b.shape
        self.n_r = int(n_r)
        self.left = None if left is None else np.asarray(left, dtype=np.complex128)
        if self.left is not None and self.left.shape != (self.n_r, self.n_r):
            raise DimensionError(f"left factor must be ({n_r}, {n_r})")
        self.shape = (2 * self.n_r * self.n_p, 2 * self.n_r * self.n_t)

    @property
    def fro_norm_sq(self) -> float:
        left_sq = float(self.n_r) if self.left is None else float(np.sum(np.abs(self.left) ** 2))
        return 2.0 * left_sq * float(np.sum(np.abs(self.b) ** 2))

    def _cmatvec(self, u: np.ndarray) -> np.ndarray:
        x = unvec(u, (self.n_r, self.n_t))
        if self.left is not None:
            x = self.left @ x
        return vec(x @ self.b)

    def _crmatvec(self, v: np.ndarray) -> np.ndarray:
        x = unvec(v, (self.n_r, self.n_p))
        if self.left is not None:
            x = self.left.conj().T @ x
        return vec(x @ self.b.conj().T)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return realstack(self._cmatvec(unstack(x)))

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return realstack(self._crmatvec(unstack(y)))

    def to_dense(self) -> np.ndarray:
        left = np.eye(self.n_r) if self.left is None else self.left
        return realify_complex_matrix(np.kron(self.b.T, left))
