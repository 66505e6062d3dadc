"""Torus heat kernel and the Riesz spatial covariance.

The torus is ``[-1, 1]`` with its ends identified.  The heat kernel solves
``G_t = G_xx`` with ``G(0, .) = delta_0`` and unit mass.  The Riesz covariance
``Lambda(r) = |r|^-gamma`` has the cosine expansion

    Lambda(r) = sum_{n >= 0} q_n cos(n pi r),
    q_0 = 1 / (1 - gamma),  q_n = 2 * int_0^1 x^-gamma cos(n pi x) dx.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .exceptions import DomainError, NumericError, SingularityError

#: below this time the image sum is used by ``form="auto"``
T_CROSS = 0.3

#: minimum number of images on each side of the origin
MIN_IMAGES = 7

_SPECTRAL_CUTOFF = 1e-16
_IMAGE_CUTOFF_LOG = 39.0  # exp(-39) ~ 1e-17


def _reduce(x):
    """Map positions onto the fundamental cell [-1, 1)."""
    return np.mod(np.asarray(x, dtype=float) + 1.0, 2.0) - 1.0


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("heat kernel time must be finite")
    if np.any(t <= 0):
        raise DomainError("heat kernel requires t > 0")
    return t


def image_count(t):
    """Number of images needed on each side for ~1e-17 accuracy at time ``t``."""
    tmax = float(np.max(t))
    need = math.ceil((math.sqrt(4.0 * tmax * _IMAGE_CUTOFF_LOG) + 1.0) / 2.0)
    return max(MIN_IMAGES, need)


def spectral_count(t):
    """Number of cosine modes needed so that ``exp(-pi^2 n^2 t) < 1e-16``."""
    tmin = float(np.min(t))
    return int(math.ceil(math.sqrt(-math.log(_SPECTRAL_CUTOFF) / (math.pi**2 * tmin)))) + 1


def heat_kernel_image(t, x, images=None):
    """Image-sum form ``sum_n (4 pi t)^-1/2 exp(-(x + 2n)^2 / 4t)``."""
    t = _check_time(t)
    x = _reduce(x)
    t, x = np.broadcast_arrays(t, x)
    m = image_count(t) if images is None else int(images)
    n = np.arange(-m, m + 1).reshape((-1,) + (1,) * t.ndim)
    terms = np.exp(-((x + 2.0 * n) ** 2) / (4.0 * t))
    return terms.sum(axis=0) / np.sqrt(4.0 * np.pi * t)


def heat_kernel_spectral(t, x, modes=None):
    """Spectral form ``1/2 + sum_{n >= 1} exp(-pi^2 n^2 t) cos(n pi x)``."""
    t = _check_time(t)
    x = _reduce(x)
    t, x = np.broadcast_arrays(t, x)
    m = spectral_count(t) if modes is None else int(modes)
    n = np.arange(1, m + 1).reshape((-1,) + (1,) * t.ndim)
    terms = np.exp(-(np.pi**2) * n**2 * t) * np.cos(n * np.pi * x)
    return 0.5 + terms.sum(axis=0)


def heat_kernel(t, x, form="auto"):
    """Evaluate the torus heat kernel ``G(t, x)``.

    Parameters
    ----------
    t : float or array_like
        Time, strictly positive.
    x : float or array_like
        Position; reduced modulo 2 onto ``[-1, 1)``.
    form : {"auto", "image_sum", "spectral"}
        Series used.  ``"auto"`` takes the image sum for ``t < T_CROSS``.

    Returns
    -------
    float or ndarray
    """
    if not np.all(np.isfinite(np.asarray(x, dtype=float))):
        raise DomainError("heat kernel position must be finite")
    if form == "image_sum":
        out = heat_kernel_image(t, x)
    elif form == "spectral":
        out = heat_kernel_spectral(t, x)
    elif form == "auto":
        t_arr = _check_time(t)
        t_arr, x_arr = np.broadcast_arrays(t_arr, np.asarray(x, dtype=float))
        out = np.empty(t_arr.shape)
        small = t_arr < T_CROSS
        if np.any(small):
            out[small] = heat_kernel_image(t_arr[small], x_arr[small])
        if np.any(~small):
            out[~small] = heat_kernel_spectral(t_arr[~small], x_arr[~small])
    else:
        raise DomainError(f"unknown heat kernel form {form!r}")
    return out[()] if np.ndim(out) == 0 else out


def riesz_covariance(r, gamma):
    """Riesz covariance ``|r|^-gamma``; raises at ``r = 0``."""
    _check_gamma(gamma)
    r = np.asarray(r, dtype=float)
    if np.any(r == 0):
        raise SingularityError("Lambda(0) is infinite")
    out = np.abs(r) ** (-gamma)
    return out[()] if out.ndim == 0 else out


def _check_gamma(gamma):
    if not (0.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")


def _near_origin_series(gamma, terms=14):
    # int_0^a x^-g cos(k x) dx with k a = 1, divided by a^(1-g)
    m = np.arange(terms)
    return float(np.sum((-1.0) ** m / (special.factorial(2 * m) * (2 * m + 1 - gamma))))


def _half_coefficient(gamma, n, rtol):
    """``int_0^1 x^-gamma cos(n pi x) dx`` by singularity splitting."""
    k = n * math.pi
    a = 1.0 / k
    near = a ** (1.0 - gamma) * _near_origin_series(gamma)
    far, err = integrate.quad(lambda x: x ** (-gamma), a, 1.0, weight="cos", wvar=k,
                              epsabs=0.0, epsrel=rtol * 1e-2, limit=400)
    value = near + far
    if not np.isfinite(value) or err > rtol * abs(value):
        raise NumericError(f"coefficient quadrature failed at n={n}: err={err:.3g}, value={value:.3g}")
    return value


def asymptotic_coefficients(gamma, n):
    """Large-``n`` expansion of ``q_n``, accurate to ``O(n^-6)``.

    Uses ``int_0^1 = int_0^inf - int_1^inf`` and repeated integration by
    parts on the tail integral.
    """
    n = np.asarray(n, dtype=float)
    k = n * np.pi
    sign = np.where(np.mod(n, 2) == 0, 1.0, -1.0)
    lead = special.gamma(1.0 - gamma) * np.sin(np.pi * gamma / 2.0) * k ** (gamma - 1.0)
    tail = gamma * sign / k**2 - gamma * (gamma + 1.0) * (gamma + 2.0) * sign / k**4
    return 2.0 * (lead - tail)


@dataclass(frozen=True)
class RieszKernel:
    """Fourier coefficient table ``q_0 .. q_N`` of a spatial covariance.

    ``q`` is stored read-only; instances are safe to share between threads.
    Coefficients beyond the table are available through :meth:`coefficients`
    (asymptotic expansion for Riesz kernels, zero for custom tables).
    """

    gamma: float
    q: np.ndarray = field(repr=False)
    riesz: bool = True

    def __post_init__(self):
        _check_gamma(self.gamma)
        q = np.array(self.q, dtype=float)
        if q.ndim != 1 or q.size < 1:
            raise DomainError("q must be a non-empty 1-D table")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise DomainError("coefficients must be finite and non-negative")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @property
    def mode_count(self):
        return self.q.size - 1

    def coefficients(self, n):
        """``q_n`` for arbitrary non-negative integer ``n``."""
        n = np.asarray(n, dtype=np.int64)
        out = np.zeros(n.shape)
        inside = n <= self.mode_count
        out[inside] = self.q[n[inside]]
        if self.riesz and np.any(~inside):
            out[~inside] = np.maximum(asymptotic_coefficients(self.gamma, n[~inside]), 0.0)
        return out

    def truncated(self, modes):
        """A kernel keeping only modes ``0..modes``."""
        modes = int(modes)
        if modes < 0:
            raise DomainError("modes must be >= 0")
        q = self.coefficients(np.arange(modes + 1))
        return RieszKernel(self.gamma, q, riesz=self.riesz and modes >= self.mode_count)

    def covariance(self, r, modes=None, cesaro=False):
        """Partial sum ``sum_{n <= N} w_n q_n cos(n pi r)`` of the expansion.

        With ``cesaro=True`` the Fejer weights ``1 - n / (N + 1)`` are applied.
        """
        N = self.mode_count if modes is None else min(int(modes), self.mode_count)
        n = np.arange(N + 1)
        w = 1.0 - n / (N + 1.0) if cesaro else np.ones(N + 1)
        r = np.asarray(r, dtype=float)
        out = np.cos(np.pi * np.multiply.outer(r, n)) @ (w * self.q[: N + 1])
        return out[()] if np.ndim(out) == 0 else out

    def pointwise_variance(self):
        """``sum_n q_n``: variance rate of the truncated noise at one point."""
        return float(self.q.sum())

    def envelope(self, n_min=16, n_max=None):
        """Fit ``log q_n = c + slope log n`` over ``[n_min, n_max]``.

        Returns
        -------
        slope : float
        lower, upper : float
            Constants with ``lower n^slope <= q_n <= upper n^slope`` on the range.
        """
        n_max = self.mode_count if n_max is None else int(n_max)
        n = np.arange(n_min, n_max + 1)
        qn = self.q[n]
        if np.any(qn <= 0):
            raise NumericError("envelope fit needs strictly positive coefficients")
        slope, _ = np.polyfit(np.log(n), np.log(qn), 1)
        ratio = qn / n ** (self.gamma - 1.0)
        return float(slope), float(ratio.min()), float(ratio.max())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "q_n"])
            for n, qn in enumerate(self.q):
                writer.writerow([n, repr(float(qn))])


def riesz_coefficients(gamma, N, rtol=1e-10):
    """Cosine coefficients of ``|x|^-gamma`` on the torus.

    Parameters
    ----------
    gamma : float
        Riesz exponent in ``(0, 1)``.
    N : int
        Highest mode, ``N >= 1``.
    rtol : float
        Relative tolerance demanded of each quadrature.

    Returns
    -------
    RieszKernel
    """
    _check_gamma(gamma)
    if int(N) < 1:
        raise DomainError("N must be >= 1")
    q = np.empty(int(N) + 1)
    q[0] = 1.0 / (1.0 - gamma)
    for n in range(1, int(N) + 1):
        q[n] = 2.0 * _half_coefficient(gamma, n, rtol)
    if np.any(q < -1e-12):
        raise NumericError("negative coefficient beyond round-off")
    np.maximum(q, 0.0, out=q)
    return RieszKernel(gamma, q)


_CACHE = {}


def cached_riesz_coefficients(gamma, N):
    """Memoised :func:`riesz_coefficients`; kernels are immutable."""
    key = (float(gamma), int(N))
    if key not in _CACHE:
        _CACHE[key] = riesz_coefficients(gamma, N)
    return _CACHE[key]
