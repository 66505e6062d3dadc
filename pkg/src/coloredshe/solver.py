"""Solution paths of the stochastic heat equation on the torus.

Two solvers are provided:

* :func:`solve_constant_sigma` samples the mild solution exactly in spectral
  form when sigma is constant (no time-discretisation bias at grid times).
* :func:`solve_general` is an explicit finite-difference Euler-Maruyama
  scheme for any bounded, Lipschitz sigma(t, x, u).

The module also checks the Da Prato-Kwapien-Zabczyk factorisation identity
per Fourier mode, and evaluates the second moment of the factorised process.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, special

from .exceptions import ConfigurationError, ContractError, CoverageError, DomainError, NumericError
from .kernel import RieszKernel
from .noise import OUTransition, as_generator, basis, mode_rates, ou_variance_factor
from .rng import RngSpec, map_blocks, trial_blocks


# --------------------------------------------------------------------------
# sigma


@dataclass(frozen=True)
class SigmaSpec:
    """Diffusion coefficient sigma(t, x, u) with its modelling bounds.

    Use :meth:`constant` or :meth:`function` rather than the constructor.
    ``func`` must be vectorised over numpy arrays.
    """

    kind: str
    c1: float
    c2: float
    lip: float = 0.0
    value: float = None
    func: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "function"):
            raise DomainError(f"unknown sigma kind {self.kind!r}")
        if not (0 < self.c1 <= self.c2):
            raise DomainError("need 0 < c1 <= c2")
        if self.lip < 0:
            raise DomainError("Lipschitz constant must be >= 0")
        if self.kind == "constant" and not (self.c1 <= self.value <= self.c2):
            raise DomainError("constant sigma outside [c1, c2]")

    @classmethod
    def constant(cls, value):
        return cls("constant", float(value), float(value), 0.0, value=float(value))

    @classmethod
    def function(cls, func, c1, c2, lip):
        return cls("function", float(c1), float(c2), float(lip), func=func)

    @property
    def is_constant(self):
        return self.kind == "constant"

    def __call__(self, t, x, u):
        if self.is_constant:
            return np.full(np.shape(u), self.value)
        return np.asarray(self.func(t, x, u), dtype=float)

    def monitored(self, t, x, u):
        """Evaluate and enforce ``c1 <= sigma <= c2``."""
        s = self(t, x, u)
        bad = (s < self.c1) | (s > self.c2) | ~np.isfinite(s)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            xb = np.broadcast_to(x, s.shape)[idx]
            ub = np.asarray(u)[idx]
            raise ContractError(
                f"sigma={s[idx]:.6g} outside [{self.c1}, {self.c2}] at t={t:.6g}, x={xb:.6g}, u={ub:.6g}")
        return s

    def check_lipschitz(self, rng=None, samples=2000, u_scale=10.0):
        """Spot-check ``|sigma(t,x,u) - sigma(t,x,v)| <= lip |u - v|``.

        Returns the largest observed difference quotient.
        """
        if self.is_constant:
            return 0.0
        gen = as_generator(rng)
        t = gen.uniform(0.0, 1.0, samples)
        x = gen.uniform(-1.0, 1.0, samples)
        u = gen.normal(0.0, u_scale, samples)
        v = u + gen.normal(0.0, 1.0, samples)
        quot = np.abs(self(t, x, u) - self(t, x, v)) / np.maximum(np.abs(u - v), 1e-300)
        worst = float(quot.max())
        if worst > self.lip * (1 + 1e-9) + 1e-12:
            raise ContractError(f"observed Lipschitz quotient {worst:.6g} exceeds lip={self.lip}")
        return worst


# --------------------------------------------------------------------------
# lattice paths


def lattice_positions(dx):
    """Positions ``-1 + j dx`` for ``j = 0..J`` with ``J dx = 2``."""
    J = int(round(2.0 / dx))
    if J < 2 or abs(J * dx - 2.0) > 1e-9:
        raise ConfigurationError(f"dx={dx} must divide the torus length 2")
    return -1.0 + dx * np.arange(J + 1), J


def step_count(T, dt):
    if not (T > 0 and dt > 0):
        raise DomainError("T and dt must be > 0")
    M = int(round(T / dt))
    if M < 1 or abs(M * dt - T) > 1e-9 * T:
        raise ConfigurationError(f"T={T} is not a multiple of dt={dt}")
    return M


@dataclass
class LatticePath:
    """Space-time samples ``values[m, j] = u(m dt, -1 + j dx)``.

    The last column duplicates the first (periodic closure).
    """

    dx: float
    dt: float
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.dt * np.arange(self.values.shape[0])

    @property
    def positions(self):
        return -1.0 + self.dx * np.arange(self.values.shape[1])

    @property
    def horizon(self):
        return self.dt * (self.values.shape[0] - 1)

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def time_index(self, t):
        """Nearest lattice time index; raises if ``t`` lies outside the path."""
        m = int(round(t / self.dt))
        if t < -1e-12 or m >= self.values.shape[0]:
            raise CoverageError(f"t={t} outside path horizon {self.horizon}")
        return m

    def space_index(self, x):
        """Nearest lattice column for positions ``x`` (array) in ``[-1, 1]``."""
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1.0 + 1e-12):
            raise CoverageError("positions outside [-1, 1]")
        return np.rint((x + 1.0) / self.dx).astype(int)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "j", "t", "x", "u"])
            for m, t in enumerate(self.times):
                for j, x in enumerate(self.positions):
                    writer.writerow([m, j, repr(float(t)), repr(float(x)), repr(float(self.values[m, j]))])


# --------------------------------------------------------------------------
# exact spectral solver


def iterate_spectral(kernel, dt, steps, xs, gen, replicas, scale=1.0, a0=None, modes=None):
    """Yield ``(m, field)`` for ``m = 1..steps`` from the exact OU recursion.

    ``field`` has shape ``(replicas, len(xs))``.  ``a0`` are optional initial
    cosine amplitudes (deterministic initial data).
    """
    trans = OUTransition.build(kernel, dt, modes=modes)
    N = trans.decay.size - 1
    C, S = basis(xs, N)
    a = np.zeros((replicas, N + 1))
    b = np.zeros((replicas, N))
    if a0 is not None:
        a[:, : len(a0)] = np.asarray(a0, dtype=float)[: N + 1]
    for m in range(1, steps + 1):
        trans.advance(a, b, gen, scale)
        yield m, a @ C + b @ S


def _initial_field(u0_coeffs, xs, modes):
    if u0_coeffs is None:
        return np.zeros(len(xs)), None
    c = np.zeros(modes + 1)
    u0 = np.asarray(u0_coeffs, dtype=float)
    c[: min(len(u0), modes + 1)] = u0[: modes + 1]
    C, _ = basis(xs, modes)
    return c @ C, c


def solve_constant_sigma(kernel, sigma, T, dt, dx, rng, u0_coeffs=None, modes=None):
    """Exact spectral sample of the solution with constant ``sigma``.

    Parameters
    ----------
    kernel : RieszKernel
    sigma : float
        Constant diffusion coefficient (0 allowed: deterministic heat flow).
    T, dt : float
        Horizon and output step; ``T`` must be a multiple of ``dt``.
    dx : float
        Lattice step; ``2 / dx`` must be an integer.
    rng : RngSpec, Generator or int
    u0_coeffs : array_like, optional
        Cosine coefficients of the initial data, ``u0 = sum c_n cos(n pi x)``.
    """
    M = step_count(T, dt)
    xs, _ = lattice_positions(dx)
    N = kernel.mode_count if modes is None else int(modes)
    u_init, c0 = _initial_field(u0_coeffs, xs, N)
    gen = as_generator(rng)
    values = np.empty((M + 1, xs.size))
    values[0] = u_init
    for m, f in iterate_spectral(kernel, dt, M, xs, gen, 1, scale=sigma, a0=c0, modes=N):
        values[m] = f[0]
    values[:, -1] = values[:, 0]
    if not np.all(np.isfinite(values)):
        raise NumericError("non-finite values in spectral path")
    return LatticePath(dx, dt, values, _meta(kernel, N, rng, "spectral"))


def sample_constant_sigma(kernel, sigma, T, dt, dx, rng, trials, modes=None, workers=None):
    """``trials`` independent spectral paths as an array ``(trials, M+1, J+1)``.

    Trials are generated in RNG blocks, so results do not depend on workers.
    """
    M = step_count(T, dt)
    xs, _ = lattice_positions(dx)
    rng = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    out = np.zeros((trials, M + 1, xs.size))

    def run(block):
        b, start, stop = block
        gen = rng.generator(b)
        for m, f in iterate_spectral(kernel, dt, M, xs, gen, stop - start, scale=sigma, modes=modes):
            out[start:stop, m] = f

    map_blocks(run, trial_blocks(trials), workers)
    out[:, :, -1] = out[:, :, 0]
    return out


def _meta(kernel, modes, rng, solver):
    seed = rng.seed if isinstance(rng, RngSpec) else (int(rng) if isinstance(rng, (int, np.integer)) else None)
    return {"gamma": kernel.gamma, "modes": int(modes), "seed": seed, "solver": solver}


# --------------------------------------------------------------------------
# finite differences


def _lattice_u0(u0, xs, J):
    if u0 is None:
        return np.zeros(J)
    if callable(u0):
        return np.asarray(u0(xs[:J]), dtype=float)
    arr = np.asarray(u0, dtype=float)
    if arr.ndim == 0:
        return np.full(J, float(arr))
    if arr.size == J + 1:
        arr = arr[:J]
    if arr.size != J:
        raise DomainError(f"initial profile needs {J} or {J + 1} lattice values")
    return arr.copy()


def solve_general(kernel, sigma, u0, T, dt, dx, rng, trials=None, keep="all", workers=None):
    """Explicit finite-difference Euler-Maruyama scheme with periodic boundary.

    ``u[m+1, j] = u[m, j] + (dt / dx^2) (u[m, j+1] - 2 u[m, j] + u[m, j-1])
    + sigma(t_m, x_j, u[m, j]) Delta F_j``.

    Parameters
    ----------
    kernel : RieszKernel
        Noise covariance; every tabulated mode drives the lattice.
    sigma : SigmaSpec
    u0 : None, float, callable or array
        Initial profile on the lattice (``None`` means identically zero).
    trials : int, optional
        When given, returns an array ``(trials, M+1, J+1)`` (``keep="all"``)
        or ``(trials, J+1)`` (``keep="final"``) instead of a LatticePath.

    Raises
    ------
    ConfigurationError
        If ``dt > dx^2 / 4``.
    ContractError
        If sigma leaves ``[c1, c2]`` during the run.
    """
    if not isinstance(sigma, SigmaSpec):
        raise DomainError("solve_general needs a SigmaSpec")
    M = step_count(T, dt)
    xs, J = lattice_positions(dx)
    if dt > dx**2 / 4.0 * (1 + 1e-12):
        raise ConfigurationError(f"unstable step: dt={dt} > dx^2/4={dx**2 / 4}")
    ratio = dt / dx**2
    N = kernel.mode_count
    C, S = basis(xs[:J], N)
    root_q = np.sqrt(kernel.q)
    C = np.sqrt(dt) * root_q[:, None] * C
    S = np.sqrt(dt) * root_q[1:, None] * S
    u_init = _lattice_u0(u0, xs, J)
    x_row = xs[:J]

    def run_batch(gen, n):
        u = np.broadcast_to(u_init, (n, J)).copy()
        hist = np.empty((n, M + 1, J)) if keep == "all" else None
        if hist is not None:
            hist[:, 0] = u
        for m in range(M):
            t = m * dt
            dF = gen.standard_normal((n, N + 1)) @ C + gen.standard_normal((n, N)) @ S
            s = sigma.monitored(t, x_row, u)
            lap = np.roll(u, -1, axis=1) - 2.0 * u + np.roll(u, 1, axis=1)
            u = u + ratio * lap + s * dF
            if hist is not None:
                hist[:, m + 1] = u
        if not np.all(np.isfinite(u)):
            raise NumericError("finite-difference solution blew up")
        return hist if hist is not None else u

    def close(arr):
        return np.concatenate([arr, arr[..., :1]], axis=-1)

    if trials is None:
        gen = as_generator(rng)
        hist = run_batch(gen, 1)
        if keep != "all":
            raise DomainError("single paths always keep every step")
        return LatticePath(dx, dt, close(hist[0]), _meta(kernel, N, rng, "finite-difference"))

    rng = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    shape = (trials, M + 1, J) if keep == "all" else (trials, J)
    out = np.empty(shape)

    def run(block):
        b, start, stop = block
        out[start:stop] = run_batch(rng.generator(b), stop - start)

    map_blocks(run, trial_blocks(trials), workers)
    return close(out)


def scheme_variance(kernel, t, dt, dx):
    """Exact one-point variance of :func:`solve_general` (sigma = 1, u0 = 0).

    Each noise mode ``n`` lands on the lattice eigenvector with multiplier
    ``rho_n = 1 - 4 (dt/dx^2) sin^2(n pi dx / 2)``; aliasing is built in.
    """
    M = step_count(t, dt)
    n = np.arange(kernel.mode_count + 1)
    rho = 1.0 - 4.0 * (dt / dx**2) * np.sin(n * np.pi * dx / 2.0) ** 2
    r2 = rho**2
    geom = np.where(np.isclose(r2, 1.0), float(M), (1.0 - r2**M) / np.where(np.isclose(r2, 1.0), 1.0, 1.0 - r2))
    return float(np.sum(kernel.q * dt * geom))


# --------------------------------------------------------------------------
# factorisation


@dataclass
class FactorizationReport:
    alpha: float
    mode: int
    lhs: float
    rhs: float
    rel_err: float
    dt_fine: float


def _kernel_integral(power, lam, lo, hi):
    """``int_lo^hi u^(power-1) exp(-lam u) du`` elementwise, ``power > 0``."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lam == 0:
        return (hi**power - lo**power) / power
    scale = lam ** (-power) * special.gamma(power)
    a, b = lam * lo, lam * hi
    lower = special.gammainc(power, b) - special.gammainc(power, a)
    upper = special.gammaincc(power, a) - special.gammaincc(power, b)
    return scale * np.where(a > power, upper, lower)


def factorization_sides(alpha, n, T, increments):
    """Both sides of the factorisation identity for one mode and one path.

    The Brownian path is the piecewise-linear interpolant of ``increments``
    on a uniform grid of ``[0, T]``.  The left side
    ``int_0^T exp(-lam (T - s)) d beta(s)`` is computed exactly; ``Y`` is
    computed exactly at the grid nodes and the outer integral against the
    singular weight ``(T - r)^(alpha - 1)`` uses product integration with a
    linear interpolant of ``Y``.
    """
    dB = np.asarray(increments, dtype=float)
    K = dB.size
    dt = T / K
    lam = (math.pi * n) ** 2
    rate = dB / dt
    nodes = dt * np.arange(K + 1)

    lhs = float(np.sum(rate * _kernel_integral(1.0, lam, T - nodes[1:], T - nodes[:-1])))

    # Y at nodes: Toeplitz convolution of the rate with cell integrals of u^-a e^-lam u
    w = _kernel_integral(1.0 - alpha, lam, nodes[:-1], nodes[1:])
    Y = np.zeros(K + 1)
    if np.any(rate):
        Y[1:] = signal.fftconvolve(rate, w)[:K]

    # product integration on each cell [r_m, r_{m+1}], with u = T - r
    u_hi = T - nodes[:-1]
    u_lo = T - nodes[1:]
    m0 = _kernel_integral(alpha, lam, u_lo, u_hi)
    m1 = _kernel_integral(alpha + 1.0, lam, u_lo, u_hi)
    # r - r_m = (T - r_m) - u
    lin = (u_hi * m0 - m1) / dt
    outer = np.sum(Y[:-1] * (m0 - lin) + Y[1:] * lin)
    rhs = math.sin(math.pi * alpha) / math.pi * float(outer)
    return lhs, rhs


def factorization_check(alpha, n, T, dt_fine, rng, gamma=0.5, increments=None, path_dt=None):
    """Compare both sides of the factorisation identity on one Brownian path.

    The path is sampled at resolution ``path_dt`` (default ``dt_fine``) and
    interpolated linearly in between; ``dt_fine`` is the quadrature step.
    Refining ``dt_fine`` with the path held fixed gives a self-convergence
    study on a single seed.

    Raises
    ------
    DomainError
        If ``alpha`` lies outside ``(0, (2 - gamma) / 4)``.
    """
    if not (0.0 < alpha < (2.0 - gamma) / 4.0):
        raise DomainError(f"alpha={alpha} outside (0, {(2 - gamma) / 4})")
    K = step_count(T, dt_fine)
    path_dt = dt_fine if path_dt is None else float(path_dt)
    K_path = step_count(T, path_dt)
    if K % K_path:
        raise ConfigurationError("path_dt must be a multiple of dt_fine")
    if increments is None:
        increments = as_generator(rng).standard_normal(K_path) * math.sqrt(path_dt)
    increments = np.asarray(increments, dtype=float)
    if increments.size != K_path:
        raise DomainError(f"expected {K_path} increments, got {increments.size}")
    sub = K // K_path
    fine = np.repeat(increments / sub, sub)
    lhs, rhs = factorization_sides(alpha, n, T, fine)
    rel = abs(lhs - rhs) / max(abs(lhs), np.finfo(float).eps)
    return FactorizationReport(alpha, int(n), lhs, rhs, rel, dt_fine)


def coarsen(increments, factor):
    """Sum consecutive increments: the same Brownian path on a coarser grid."""
    dB = np.asarray(increments, dtype=float)
    if dB.size % factor:
        raise DomainError("increment count must be divisible by the factor")
    return dB.reshape(-1, factor).sum(axis=1)


# --------------------------------------------------------------------------
# second moment of the factorised process


def _riesz_prefactor(gamma):
    # leading constant A of q_n ~ A n^(gamma - 1)
    return 2.0 * special.gamma(1.0 - gamma) * math.sin(math.pi * gamma / 2.0) * math.pi ** (gamma - 1.0)


@dataclass
class YAlphaReport:
    alpha: float
    r: float
    value: float
    bound_series: float
    constant: float
    tail: float
    converged: bool


def y_alpha_second_moment(alpha, kernel, r, c2=1.0, tol=1e-2):
    """``E[Y_alpha(r, z)^2]`` for sigma bounded by ``c2`` (equality at sigma = c2).

    Evaluates ``c2^2 sum_n q_n int_0^r u^(-2 alpha) exp(-2 pi^2 n^2 u) du``
    with incomplete gamma functions, adds an envelope estimate of the modes
    beyond the summed range, and compares with the majorant
    ``q_0 + Gamma(1 - 2 alpha) sum_{n>=1} q_n n^(4 alpha - 2)``.
    """
    gamma = kernel.gamma
    if not (0.0 < alpha < (2.0 - gamma) / 4.0):
        raise DomainError(f"alpha={alpha} outside (0, {(2 - gamma) / 4})")
    if not r > 0:
        raise DomainError("r must be > 0")
    s = 1.0 - 2.0 * alpha
    n_sum = kernel.mode_count
    if kernel.riesz:
        n_sum = max(n_sum, int(math.ceil(20.0 / math.sqrt(r))))
    n = np.arange(1, n_sum + 1)
    q = kernel.coefficients(np.arange(n_sum + 1))
    two_lam = 2.0 * (math.pi * n) ** 2
    per_mode = two_lam ** (-s) * special.gamma(s) * special.gammainc(s, two_lam * r)
    value = q[0] * r**s / s + float(np.sum(q[1:] * per_mode))
    bound = q[0] + special.gamma(s) * float(np.sum(q[1:] * n ** (4 * alpha - 2)))

    tail = bound_tail = 0.0
    if kernel.riesz:
        p = gamma + 4 * alpha - 3.0
        A = _riesz_prefactor(gamma)
        edge = (n_sum + 0.5) ** (p + 1.0) / (-(p + 1.0))
        tail = A * (2 * math.pi**2) ** (-s) * special.gamma(s) * edge
        bound_tail = A * special.gamma(s) * edge
    value += tail
    bound += bound_tail
    value *= c2**2
    converged = tail <= tol * value if value > 0 else True
    const = value / (c2**2 * bound) if bound > 0 else 0.0
    return YAlphaReport(alpha, r, value, bound, const, tail * c2**2, bool(converged))


def y_alpha_cell_variances(alpha, lam, r, cells):
    """Variance of ``int_cell (r - s)^-alpha exp(-lam (r - s)) d beta(s)`` per cell."""
    edges = np.linspace(0.0, r, cells + 1)
    u_hi = r - edges[:-1]
    u_lo = r - edges[1:]
    return _kernel_integral(1.0 - 2.0 * alpha, 2.0 * lam, u_lo, u_hi)


__all__ = [
    "SigmaSpec", "LatticePath", "FactorizationReport", "YAlphaReport",
    "solve_constant_sigma", "sample_constant_sigma", "solve_general", "scheme_variance",
    "factorization_check", "factorization_sides", "coarsen", "y_alpha_second_moment",
    "lattice_positions", "step_count", "iterate_spectral",
]
