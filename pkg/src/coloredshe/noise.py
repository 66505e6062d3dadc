"""Spectral sampling of the colored noise and its stochastic convolution.

With sigma = 1 the stochastic convolution is a random cosine/sine series whose
amplitudes are independent Ornstein-Uhlenbeck processes,

    N(t, x) = sum_n a_n(t) cos(n pi x) + b_n(t) sin(n pi x),
    da_n = -pi^2 n^2 a_n dt + sqrt(q_n) d beta_n,

so each amplitude can be advanced exactly over any step.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DomainError, NumericError
from .kernel import RieszKernel
from .rng import RngSpec


def as_generator(rng, block=0):
    """Coerce ``rng`` (Generator, RngSpec, int or None) to a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator(block)
    if rng is None or isinstance(rng, (int, np.integer)):
        return RngSpec(0 if rng is None else int(rng)).generator(block)
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")


def mode_rates(modes):
    """Decay rates ``pi^2 n^2`` for ``n = 0..modes``."""
    n = np.arange(modes + 1, dtype=float)
    return np.pi**2 * n**2


def ou_variance_factor(modes, dt):
    """``int_0^dt exp(-2 pi^2 n^2 s) ds`` for ``n = 0..modes``."""
    lam = mode_rates(modes)
    out = np.empty(modes + 1)
    out[0] = dt
    out[1:] = -np.expm1(-2.0 * lam[1:] * dt) / (2.0 * lam[1:])
    return out


@dataclass(frozen=True)
class OUTransition:
    """Exact one-step transition of all amplitudes over a step ``dt``."""

    dt: float
    decay: np.ndarray
    sd: np.ndarray

    @classmethod
    def build(cls, kernel, dt, modes=None):
        if not dt > 0:
            raise DomainError("dt must be > 0")
        N = kernel.mode_count if modes is None else int(modes)
        q = kernel.coefficients(np.arange(N + 1))
        decay = np.exp(-mode_rates(N) * dt)
        sd = np.sqrt(q * ou_variance_factor(N, dt))
        return cls(float(dt), decay, sd)

    def advance(self, a, b, gen, scale=1.0):
        """Advance amplitude arrays ``a (..., N+1)`` and ``b (..., N)`` in place."""
        xi = gen.standard_normal(a.shape)
        eta = gen.standard_normal(b.shape)
        a *= self.decay
        a += scale * self.sd * xi
        b *= self.decay[1:]
        b += scale * self.sd[1:] * eta
        return a, b


def basis(xs, modes):
    """Cosine ``(N+1, J)`` and sine ``(N, J)`` matrices at positions ``xs``."""
    xs = np.asarray(xs, dtype=float)
    n = np.arange(modes + 1)
    phase = np.pi * np.multiply.outer(n, xs)
    return np.cos(phase), np.sin(phase[1:])


@dataclass(frozen=True)
class SpectralState:
    """Amplitudes of the solution at time ``t``.

    ``a`` holds cosine amplitudes for ``n = 0..N`` and ``b`` sine amplitudes
    for ``n = 1..N``.  Leading axes, if any, index independent replicas.
    Amplitudes already carry the ``sqrt(q_n)`` factor.
    """

    t: float
    a: np.ndarray
    b: np.ndarray
    kernel: RieszKernel = field(repr=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.shape[-1] != b.shape[-1] + 1:
            raise DomainError("need N+1 cosine and N sine amplitudes")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def zeros(cls, kernel, replicas=None, modes=None):
        N = kernel.mode_count if modes is None else int(modes)
        lead = () if replicas is None else (int(replicas),)
        return cls(0.0, np.zeros(lead + (N + 1,)), np.zeros(lead + (N,)), kernel)

    @property
    def modes(self):
        return self.a.shape[-1] - 1

    def check_finite(self):
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise NumericError("non-finite spectral amplitudes")


def ou_step(state, dt, rng, scale=1.0):
    """Advance every amplitude by the exact OU transition over ``dt``.

    ``a_n <- exp(-pi^2 n^2 dt) a_n + xi_n``, with ``Var(xi_n)`` the Ito
    isometry of the transition; mode 0 is a Brownian motion with rate
    ``q_0``.  ``scale`` multiplies the noise (a constant sigma).
    """
    if not dt > 0:
        raise DomainError("dt must be > 0")
    state.check_finite()
    gen = as_generator(rng)
    trans = OUTransition.build(state.kernel, dt, modes=state.modes)
    a = state.a.copy()
    b = state.b.copy()
    trans.advance(a, b, gen, scale)
    return replace(state, t=state.t + float(dt), a=a, b=b)


def evaluate_field(state, xs):
    """Field value ``sum a_n cos(n pi x) + b_n sin(n pi x)`` at ``xs``."""
    state.check_finite()
    xs = np.asarray(xs, dtype=float)
    if np.any(np.abs(xs) > 1.0 + 1e-12):
        raise DomainError("positions must lie in [-1, 1]")
    C, S = basis(xs, state.modes)
    return state.a @ C + state.b @ S


def default_modes(dx):
    """Mode count ``max(256, 4 / dx)`` covering the lattice Nyquist frequency."""
    return max(256, int(np.ceil(4.0 / dx)))


def check_uniform(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size < 2:
        raise DomainError("lattice needs at least two positions")
    steps = np.diff(xs)
    if np.ptp(steps) > 1e-9 * abs(steps[0]) or steps[0] <= 0:
        raise DomainError("lattice must be uniform and increasing")
    return xs


def lattice_noise_increment(kernel, xs, dt, rng, size=None):
    """Noise increments ``F(t + dt, x_j) - F(t, x_j)`` on a uniform lattice.

    Returns an array of shape ``(J,)`` or ``(size, J)``.  The covariance of
    ``Delta F_j / sqrt(dt)`` is the truncated series ``Lambda_N(x_j - x_k)``.
    """
    xs = check_uniform(xs)
    if not dt > 0:
        raise DomainError("dt must be > 0")
    gen = as_generator(rng)
    N = kernel.mode_count
    C, S = basis(xs, N)
    root_q = np.sqrt(kernel.q)
    lead = () if size is None else (int(size),)
    xi = gen.standard_normal(lead + (N + 1,))
    eta = gen.standard_normal(lead + (N,))
    return np.sqrt(dt) * ((xi * root_q) @ C + (eta * root_q[1:]) @ S)


def convolution_covariance(kernel, t, separation, modes=None):
    """Truncated closed form of ``Cov(N(t, x), N(t, x + separation))``."""
    N = kernel.mode_count if modes is None else int(modes)
    q = kernel.coefficients(np.arange(N + 1))
    v = q * ou_variance_factor(N, t)
    n = np.arange(N + 1)
    sep = np.asarray(separation, dtype=float)
    return np.cos(np.pi * np.multiply.outer(sep, n)) @ v
