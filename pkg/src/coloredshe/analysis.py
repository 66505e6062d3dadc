"""Quantitative checks on the stochastic convolution ``N`` (sigma = 1).

Series evaluations are exact up to floating point: tabulated coefficients
are extended with their large-``n`` expansion, and the saturated tail of the
variance series is summed with a Hurwitz zeta function.  Monte Carlo
components sample the spectral amplitudes from their exact Gaussian law.
"""
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from .exceptions import ConditioningError, DomainError, FitError, NumericError
from .kernel import heat_kernel_image
from .noise import OUTransition, as_generator, convolution_covariance, ou_variance_factor

#: relative share of modes beyond the table that triggers a truncation warning
TAIL_TOLERANCE = 1e-8

_CHUNK = 1 << 18


class TruncationWarning(UserWarning):
    """Series evaluated with a truncated table whose tail is not negligible."""


def _as_dict(obj):
    out = asdict(obj)
    for key, value in out.items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
    return out


# --------------------------------------------------------------------------
# series for the variance and covariance of N(t, .)


def _series_cutoff(kernel, t):
    """Highest mode summed explicitly: past it every factor has saturated."""
    sat = int(math.ceil(6.0 / math.sqrt(t)))
    if kernel.riesz:
        return max(4 * kernel.mode_count, sat)
    return kernel.mode_count


def _riesz_lead(gamma):
    """``A`` in ``q_n ~ A n^(gamma - 1)``."""
    return 2.0 * special.gamma(1 - gamma) * math.sin(math.pi * gamma / 2) * math.pi ** (gamma - 1)


def _covariance_series(kernel, t, separations):
    """``q_0 t + sum_n q_n cos(n pi d) (1 - exp(-2 pi^2 n^2 t)) / (2 pi^2 n^2)``.

    Returns ``(values, beyond)`` where ``beyond`` is the contribution at
    zero separation of modes past the coefficient table.
    """
    d = np.atleast_1d(np.asarray(separations, dtype=float))
    n_max = _series_cutoff(kernel, t)
    total = np.full(d.shape, kernel.coefficients(0)[()] * t)
    beyond = 0.0
    for lo in range(1, n_max + 1, _CHUNK):
        n = np.arange(lo, min(lo + _CHUNK, n_max + 1))
        w = kernel.coefficients(n) * ou_variance_factor_range(n, t)
        phase = np.pi * np.mod(np.multiply.outer(d, n), 2.0)
        total += np.cos(phase) @ w
        beyond += float(w[n > kernel.mode_count].sum())
    if kernel.riesz:
        # saturated tail at zero separation; oscillating tails elsewhere are
        # bounded by O(n_max^(gamma - 3)) and dropped
        zero = np.isclose(np.mod(d + 1.0, 2.0) - 1.0, 0.0, atol=1e-15)
        tail = _riesz_lead(kernel.gamma) / (2 * math.pi**2) * special.zeta(3 - kernel.gamma, n_max + 1)
        total[zero] += tail
        beyond += tail
    return total, beyond


def ou_variance_factor_range(n, t):
    """``(1 - exp(-2 pi^2 n^2 t)) / (2 pi^2 n^2)`` for integer ``n >= 1``."""
    lam2 = 2 * math.pi**2 * np.asarray(n, dtype=float) ** 2
    return -np.expm1(-lam2 * t) / lam2


def _check_t(t1):
    if not (np.isfinite(t1) and t1 > 0):
        raise DomainError("t1 must be > 0")


def _warn_tail(kernel, beyond, total):
    if not kernel.riesz and total > 0 and beyond / total > TAIL_TOLERANCE:
        warnings.warn(f"coefficient table truncated: tail share {beyond / total:.2e}",
                      TruncationWarning, stacklevel=3)


def variance_of_N(kernel, t1):
    """Exact variance of ``N(t1, x)`` (independent of ``x``).

    Modes past the coefficient table of a Riesz kernel use the asymptotic
    expansion; for custom tables a :class:`TruncationWarning` is issued when
    the omitted tail could exceed ``TAIL_TOLERANCE`` of the total.
    """
    _check_t(t1)
    values, beyond = _covariance_series(kernel, t1, [0.0])
    total = float(values[0])
    if not kernel.riesz:
        # bound on the omitted tail with q_n <= q_N
        N = kernel.mode_count
        beyond = float(kernel.q[-1]) / (2 * math.pi**2 * N) if N > 0 else 0.0
    _warn_tail(kernel, beyond, total)
    return total


def covariance_of_N(kernel, t1, lag, epsilon=1.0):
    """``Cov(N(t1, x_k), N(t1, x_k'))`` at separation ``lag * epsilon^2``.

    ``lag`` may be an array; ``lag = 0`` gives the variance.
    """
    _check_t(t1)
    sep = np.asarray(lag, dtype=float) * epsilon**2
    values, _ = _covariance_series(kernel, t1, sep.ravel())
    out = values.reshape(sep.shape)
    return float(out) if out.ndim == 0 else out


def variance_slope(kernel, t_lo=1e-5, t_hi=1e-2, points=13):
    """OLS slope of ``log Var(N(t))`` against ``log t``."""
    ts = np.logspace(math.log10(t_lo), math.log10(t_hi), points)
    var = np.array([variance_of_N(kernel, t) for t in ts])
    slope, _ = np.polyfit(np.log(ts), np.log(var), 1)
    return float(slope), ts, var


@dataclass
class CovarianceDecayReport:
    t1: float
    separations: np.ndarray
    covariance: np.ndarray
    slope: float
    C8: float
    expected: float

    def to_dict(self):
        return _as_dict(self)


def covariance_decay(kernel, t1, separations=None):
    """Fit ``log Cov`` against ``log |separation|`` and the constant ``C8``.

    ``C8`` is the smallest constant with ``Cov <= C8 t1 |d|^-gamma`` on the
    separations tested.
    """
    if separations is None:
        separations = np.logspace(-2, 0, 9) * 0.5
    d = np.asarray(separations, dtype=float)
    if np.any(d <= 0):
        raise DomainError("separations must be > 0")
    cov = covariance_of_N(kernel, t1, d)
    if np.any(cov <= 0):
        raise NumericError("non-positive covariance; log fit impossible")
    slope, _ = np.polyfit(np.log(d), np.log(cov), 1)
    C8 = float(np.max(cov / (t1 * d ** (-kernel.gamma))))
    return CovarianceDecayReport(t1, d, cov, float(slope), C8, -kernel.gamma)


# --------------------------------------------------------------------------
# conditional coefficients on the grid


@dataclass
class CovarianceMatrixReport:
    """Grid covariance of ``N(t1, x_j)`` and the conditioning coefficients."""

    t1: float
    epsilon: float
    C0: float
    Sigma: np.ndarray = field(repr=False)
    T_corr: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    norm_11: float
    eta: list = field(default=None, repr=False)
    eta_l1: float = None
    min_eigenvalue: float = None
    ridge: float = 0.0

    @property
    def admissible(self):
        return self.norm_11 < 1.0 / 3.0

    def implication_holds(self):
        """``norm_11 < 1/3`` implies ``eta_l1 <= 1/2``."""
        return (not self.admissible) or (self.eta_l1 is not None and self.eta_l1 <= 0.5)

    def summary(self):
        return dict(t1=self.t1, epsilon=self.epsilon, C0=self.C0, norm_11=self.norm_11,
                    eta_l1=self.eta_l1, min_eigenvalue=self.min_eigenvalue, ridge=self.ridge,
                    admissible=self.admissible)


def grid_covariance(kernel, t1, epsilon, points):
    """Toeplitz covariance of ``N(t1, .)`` at ``points`` positions spaced ``epsilon^2``."""
    col = covariance_of_N(kernel, t1, np.arange(points), epsilon)
    return linalg.toeplitz(col)


def conditioning_coefficients(Sigma):
    """Regression coefficients of each coordinate on all preceding ones.

    Row ``p`` of the returned matrix holds ``eta = Sigma_{<p}^-1 Sigma_{<p, p}``
    in its first ``p`` entries.  With ``Sigma = L L^T`` these rows are
    ``strictly_lower(L) @ inv(L)``, obtained from one factorisation.
    """
    L = linalg.cholesky(Sigma, lower=True)
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return np.tril(L, -1) @ Linv


def eta_report(kernel, grid, solve=True):
    """Covariance structure of the grid values ``N(t1, x_j)``.

    Parameters
    ----------
    kernel : RieszKernel
    grid : GridSpec
        Only positions that are distinct on the torus enter ``Sigma``.
    solve : bool
        Also solve for the conditioning coefficients ``eta``.

    Raises
    ------
    ConditioningError
        If ``Sigma`` is not positive definite even after a ridge of
        ``1e-12 * trace``.
    """
    # duplicate torus points would make Sigma exactly singular
    M = grid.distinct_indices.size
    if M > 2000:
        raise DomainError(f"{M} grid points exceed the dense-solve limit of 2000")
    Sigma = grid_covariance(kernel, grid.t1, grid.epsilon, M)
    eig = linalg.eigvalsh(Sigma)
    trace = float(np.trace(Sigma))
    if eig[0] < -1e-10 * trace:
        raise ConditioningError("covariance matrix is not positive semi-definite", float(eig[0]))
    sd = np.sqrt(np.diag(Sigma))
    Tc = Sigma / np.outer(sd, sd)
    np.fill_diagonal(Tc, 1.0)
    A = np.eye(M) - Tc
    norm_11 = float(np.abs(A).sum(axis=0).max())
    report = CovarianceMatrixReport(grid.t1, grid.epsilon, grid.C0, Sigma, Tc, A, norm_11,
                                    min_eigenvalue=float(eig[0]))
    if not solve:
        return report
    ridge = 0.0
    try:
        E = conditioning_coefficients(Sigma)
    except linalg.LinAlgError:
        ridge = 1e-12 * trace
        try:
            E = conditioning_coefficients(Sigma + ridge * np.eye(M))
        except linalg.LinAlgError:
            raise ConditioningError("covariance matrix singular after ridge", float(eig[0])) from None
    report.eta = [E[p, :p] for p in range(M)]
    report.eta_l1 = float(np.abs(E).sum(axis=1).max())
    report.ridge = ridge
    return report


@dataclass
class EtaSweep:
    epsilon: float
    C0: np.ndarray
    norm_11: np.ndarray
    eta_l1: np.ndarray
    monotone: bool
    threshold_C0: float
    implication_holds: bool

    def to_dict(self):
        return _as_dict(self)


def eta_sweep(kernel, epsilon, C0s, T=1.0):
    """``eta_l1`` and ``norm_11`` over a range of temporal coefficients.

    ``threshold_C0`` is the log-interpolated crossing of ``eta_l1 = 1/2``
    (NaN when the sweep does not cross it).
    """
    from .smallball import make_grid

    C0s = np.sort(np.asarray(C0s, dtype=float))
    norms, etas, implication = [], [], True
    for C0 in C0s:
        rep = eta_report(kernel, make_grid(epsilon, kernel.gamma, C0, T))
        norms.append(rep.norm_11)
        etas.append(rep.eta_l1)
        implication &= rep.implication_holds()
    norms, etas = np.array(norms), np.array(etas)
    monotone = bool(np.all(np.diff(etas) >= -1e-12 * np.abs(etas[1:])))
    threshold = math.nan
    above = np.flatnonzero(etas > 0.5)
    if above.size and above[0] > 0:
        i = above[0]
        x0, x1 = np.log(C0s[i - 1]), np.log(C0s[i])
        y0, y1 = etas[i - 1], etas[i]
        threshold = float(np.exp(x0 + (0.5 - y0) * (x1 - x0) / (y1 - y0)))
    return EtaSweep(float(epsilon), C0s, norms, etas, monotone, threshold, bool(implication))


# --------------------------------------------------------------------------
# regularity


@dataclass
class RegularityReport:
    direction: str
    base: float
    lags: np.ndarray
    msq: np.ndarray
    msq_se: np.ndarray
    exact: np.ndarray
    slope: float
    slope_mc_se: float
    expected: float
    tolerance: float = 0.1
    inconclusive: bool = False

    @property
    def passes(self):
        return abs(self.slope - self.expected) <= self.tolerance and not self.inconclusive

    def to_dict(self):
        return _as_dict(self)


def regularity_exact(kernel, direction, base, lags):
    """Exact mean-squared increments of the truncated ``N``.

    ``direction="space"``: ``E[(N(t, x + h) - N(t, x))^2]`` at ``t = base``.
    ``direction="time"``: ``E[(N(t + tau, x) - N(t, x))^2]`` at ``t = base``.
    """
    N = kernel.mode_count
    n = np.arange(N + 1)
    q = kernel.q
    v = q * ou_variance_factor(N, base)
    lags = np.asarray(lags, dtype=float)
    if direction == "space":
        return 2.0 * (1.0 - np.cos(np.pi * np.multiply.outer(lags, n))) @ v
    if direction == "time":
        lam = np.pi**2 * n**2
        out = []
        for tau in lags:
            carry = (1.0 - np.exp(-lam * tau)) ** 2 * v
            fresh = q * ou_variance_factor(N, tau) if tau > 0 else np.zeros(N + 1)
            out.append(float(carry.sum() + fresh.sum()))
        return np.array(out)
    raise DomainError(f"direction must be 'space' or 'time', got {direction!r}")


def _sample_state(kernel, t, trials, gen):
    sd = np.sqrt(kernel.q * ou_variance_factor(kernel.mode_count, t))
    a = gen.standard_normal((trials, sd.size)) * sd
    b = gen.standard_normal((trials, sd.size - 1)) * sd[1:]
    return a, b


def _log_fit(lags, msq, se):
    x, y = np.log(lags), np.log(msq)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    # propagate the MC error of each log msq into the OLS slope
    H = np.linalg.pinv(X)[1]
    slope_se = float(np.sqrt(np.sum((H * se / msq) ** 2)))
    return float(coef[1]), slope_se


def regularity_scan(kernel, direction, base, lags, trials, rng, tolerance=0.1):
    """Monte Carlo mean-squared increments of ``N`` and their log-log slope.

    Parameters
    ----------
    direction : {"space", "time"}
    base : float
        Time ``t`` at which the spatial increments are taken, or the earlier
        time of the temporal increments.
    lags : array_like
        Positive separations spanning at least 1.5 decades.
    """
    lags = np.asarray(lags, dtype=float)
    if np.any(lags <= 0):
        raise DomainError("lags must be > 0")
    if math.log10(lags.max() / lags.min()) < 1.5 - 1e-9:
        raise DomainError("lags must span at least 1.5 decades")
    gen = as_generator(rng)
    N = kernel.mode_count
    n = np.arange(N + 1)
    a, b = _sample_state(kernel, base, trials, gen)
    diffs = []
    if direction == "space":
        phase = np.pi * np.multiply.outer(n, lags)
        C, S = np.cos(phase) - 1.0, np.sin(phase[1:])
        diffs = a @ C + b @ S
    elif direction == "time":
        cols = []
        for tau in lags:
            trans = OUTransition.build(kernel, tau)
            # at x = 0 only cosine amplitudes contribute
            xi = gen.standard_normal(a.shape) * trans.sd
            cols.append(((trans.decay - 1.0) * a + xi).sum(axis=1))
        diffs = np.column_stack(cols)
    else:
        raise DomainError(f"direction must be 'space' or 'time', got {direction!r}")
    sq = diffs**2
    msq = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(trials)
    slope, slope_se = _log_fit(lags, msq, se)
    expected = 2 - kernel.gamma if direction == "space" else (2 - kernel.gamma) / 2
    exact = regularity_exact(kernel, direction, base, lags)
    return RegularityReport(direction, float(base), lags, msq, se, exact, slope, slope_se,
                            expected, tolerance, inconclusive=slope_se > tolerance)


# --------------------------------------------------------------------------
# tail bounds


@dataclass
class TailReport:
    """Exceedance frequencies and a fitted Gaussian envelope ``c1 exp(-c2 z^2)``.

    ``z`` is the threshold in units of the reference scale (``lambda / sqrt(msq)``
    for increments).  Thresholds without exceedances carry only the one-sided
    bound ``3 / trials`` and are excluded from the fit.
    """

    lambdas: np.ndarray
    z: np.ndarray
    freq: np.ndarray
    hits: np.ndarray
    trials: int
    scale: float
    c1: float
    c2: float
    envelope: np.ndarray
    one_sided: np.ndarray
    below_envelope: bool

    @property
    def passes(self):
        return bool(self.below_envelope and self.c1 <= 2.0 and self.c2 > 0)

    def to_dict(self):
        return _as_dict(self)


def _fit_envelope(z, hits, trials, min_hits=20):
    freq = hits / trials
    fit = (hits >= min_hits) & (z >= 1.0)
    if np.count_nonzero(fit) < 2:
        raise FitError("too few thresholds with enough exceedances for an envelope fit")
    slope, _ = np.polyfit(z[fit] ** 2, np.log(freq[fit]), 1)
    c2 = -float(slope)
    seen = hits > 0
    c1 = float(np.max(freq[seen] * np.exp(c2 * z[seen] ** 2)))
    env = np.minimum(1.0, c1 * np.exp(-c2 * z**2)) if c1 <= 1 else c1 * np.exp(-c2 * z**2)
    one_sided = ~seen
    below = bool(np.all(freq[seen] <= env[seen] * (1 + 1e-12)))
    return freq, c1, c2, env, one_sided, below


def _sample_pair(kernel, pair, trials, gen):
    (t, x), (s, y) = pair
    if t > s:
        (t, x), (s, y) = (s, y), (t, x)
    if t <= 0:
        raise DomainError("times must be > 0")
    a, b = _sample_state(kernel, t, trials, gen)
    n = np.arange(kernel.mode_count + 1)

    def field_at(a, b, pos):
        return a @ np.cos(np.pi * n * pos) + b @ np.sin(np.pi * n[1:] * pos)

    first = field_at(a, b, x)
    if s > t:
        trans = OUTransition.build(kernel, s - t)
        trans.advance(a, b, gen)
    return first, field_at(a, b, y)


def increment_tail_check(kernel, pair, lambdas=None, trials=10_000, rng=0):
    """Tail of ``|N(t, x) - N(s, y)|`` against a Gaussian envelope.

    Parameters
    ----------
    pair : ((t, x), (s, y))
    lambdas : array_like, optional
        Absolute thresholds.  Defaults to 0 .. 4 empirical standard
        deviations.
    """
    gen = as_generator(rng)
    u, v = _sample_pair(kernel, pair, trials, gen)
    d = np.abs(u - v)
    msq = float(np.mean(d**2))
    scale = math.sqrt(msq)
    lambdas = np.linspace(0.0, 4.0, 17) * scale if lambdas is None else np.asarray(lambdas, float)
    z = lambdas / scale
    hits = np.array([np.count_nonzero(d > lam) for lam in lambdas])
    freq, c1, c2, env, one_sided, below = _fit_envelope(z, hits, trials)
    return TailReport(lambdas, z, freq, hits, trials, scale, c1, c2, env, one_sided, below)


@dataclass
class SupTailReport(TailReport):
    """Patch-sup tail; the envelope prefactor may exceed 2 (it carries ``1 / (1 ^ sqrt(beta))``)."""

    beta: float = None
    epsilon: float = None
    lambda_slope: float = None
    pointwise_dominated: bool = None

    @property
    def passes(self):
        return bool(self.below_envelope and self.c2 > 0 and self.pointwise_dominated)


def patch_sup(kernel, beta, epsilon, trials, rng, nt=32, nx=16, modes=1024):
    """Sup of ``|N|`` over ``[0, beta eps^4] x [0, eps^2]`` and ``|N|`` at the corner.

    Returns ``(sup, corner)``, each of length ``trials``; the corner is the
    point ``(beta eps^4, 0)`` which belongs to the patch.
    """
    horizon = beta * epsilon**4
    if not (0 < horizon <= 1):
        raise DomainError("need 0 < beta eps^4 <= 1")
    k = kernel.truncated(min(modes, kernel.mode_count))
    gen = as_generator(rng)
    trans = OUTransition.build(k, horizon / nt)
    xs = np.linspace(0.0, epsilon**2, nx + 1)
    n = np.arange(k.mode_count + 1)
    C = np.cos(np.pi * np.multiply.outer(n, xs))
    S = np.sin(np.pi * np.multiply.outer(n[1:], xs))
    a = np.zeros((trials, n.size))
    b = np.zeros((trials, n.size - 1))
    sup = np.zeros(trials)
    for _ in range(nt):
        trans.advance(a, b, gen)
        f = np.abs(a @ C + b @ S)
        np.maximum(sup, f.max(axis=1), out=sup)
    return sup, f[:, 0]


def sup_tail_check(kernel, beta, epsilon, lambdas=None, trials=10_000, rng=0, nt=32, nx=16,
                   modes=1024, z_range=(1.0, 3.5)):
    """Patch-sup exceedance ``P(sup |N| > lambda eps^(2 - gamma))`` versus ``lambda^2``.

    ``lambdas`` default to a grid over ``z_range`` standard deviations of
    ``N(beta eps^4, x)``, so runs at different ``beta`` fit comparable parts
    of the tail.  ``lambda_slope`` is the fitted slope of the log exceedance
    frequency in ``lambda^2``.
    """
    unit = epsilon ** (2 - kernel.gamma)
    sup, corner = patch_sup(kernel, beta, epsilon, trials, rng, nt, nx, modes)
    # variance of the simulated (truncated) field, so z is in its own units
    sd = math.sqrt(float(convolution_covariance(kernel, beta * epsilon**4, 0.0,
                                                min(modes, kernel.mode_count))))
    if lambdas is None:
        lambdas = np.linspace(z_range[0], z_range[1], 11) * sd / unit
    lambdas = np.asarray(lambdas, dtype=float)
    z = lambdas * unit / sd
    hits = np.array([np.count_nonzero(sup > lam * unit) for lam in lambdas])
    corner_hits = np.array([np.count_nonzero(corner > lam * unit) for lam in lambdas])
    freq, c1, c2, env, one_sided, below = _fit_envelope(z, hits, trials)
    fit = (hits >= 20) & (z >= 1.0)
    lam_slope, _ = np.polyfit(lambdas[fit] ** 2, np.log(freq[fit]), 1)
    return SupTailReport(lambdas, z, freq, hits, trials, sd, c1, c2, env, one_sided, below,
                         beta=float(beta), epsilon=float(epsilon), lambda_slope=float(lam_slope),
                         pointwise_dominated=bool(np.all(corner_hits <= hits)))


def beta_doubling_ratio(kernel, beta, epsilon, trials=10_000, rng=0, factor=2.0, **kw):
    """Ratio of fitted lambda^2-slopes at ``factor * beta`` and ``beta``.

    Returns ``(ratio, expected, first, second)`` with
    ``expected = factor^(-(2 - gamma) / 2)``.
    """
    from .rng import RngSpec

    spec = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    first = sup_tail_check(kernel, beta, epsilon, trials=trials, rng=spec.substream(0), **kw)
    second = sup_tail_check(kernel, factor * beta, epsilon, trials=trials, rng=spec.substream(1), **kw)
    expected = factor ** (-(2 - kernel.gamma) / 2)
    return second.lambda_slope / first.lambda_slope, expected, first, second


# --------------------------------------------------------------------------
# heat kernel integrals


@dataclass
class QuadratureReport:
    kind: str
    alpha: float
    exponent: float
    separations: np.ndarray
    integrals: np.ndarray
    slope: float
    constant: float

    @property
    def passes(self):
        return self.slope >= self.exponent

    def to_dict(self):
        return _as_dict(self)


def _pieces(lo, hi, marks):
    pts = sorted({lo, hi, *[m for m in marks if lo < m < hi]})
    return list(zip(pts[:-1], pts[1:]))


def _space_inner(u, d):
    """``int_{-1}^{1} |G_u(z) - G_u(z - d)| dz`` by quadrature."""
    w = math.sqrt(u)
    marks = [0.0, d / 2, d, -8 * w, 8 * w, d - 8 * w, d + 8 * w, d / 2 - 1, d / 2 + 1]

    def f(z):
        return abs(heat_kernel_image(u, z) - heat_kernel_image(u, z - d))

    return sum(integrate.quad(f, a, b, limit=200, epsabs=1e-13)[0] for a, b in _pieces(-1.0, 1.0, marks))


def _time_inner(v, h, alpha):
    """``int |G_{v+h}(z)(v+h)^(alpha-1) - G_v(z) v^(alpha-1)| dz``."""
    w = math.sqrt(v)
    marks = [2 * w, 4 * w, 8 * w, 2 * math.sqrt(v + h), 8 * math.sqrt(v + h)]

    def f(z):
        return abs(heat_kernel_image(v + h, z) * (v + h) ** (alpha - 1)
                   - heat_kernel_image(v, z) * v ** (alpha - 1))

    return 2 * sum(integrate.quad(f, a, b, limit=200, epsabs=1e-13)[0] for a, b in _pieces(0.0, 1.0, marks))


def heat_space_integral(alpha, d, t=1.0):
    """``int_0^t int |G_{t-r}(x - z) - G_{t-r}(y - z)| (t - r)^(alpha - 1) dz dr``, ``|x - y| = d``.

    The outer variable is ``w = (t - r)^alpha``, which removes the endpoint
    singularity: ``(t - r)^(alpha - 1) dr = dw / alpha``.
    """
    if d == 0:
        return 0.0
    top = t**alpha
    marks = [(d * d * f) ** alpha for f in (0.01, 0.1, 1.0, 10.0) if d * d * f < t]
    total = 0.0
    for a, b in _pieces(0.0, top, marks):
        total += integrate.quad(lambda w: _space_inner(w ** (1 / alpha), d), a, b, limit=200)[0]
    return total / alpha


def heat_time_integral(alpha, s, t):
    """``int_0^s int |G_{t-r}(z)(t-r)^(alpha-1) - G_{s-r}(z)(s-r)^(alpha-1)| dz dr``."""
    if not (0 <= s <= t):
        raise DomainError("need 0 <= s <= t")
    h = t - s
    if h == 0:
        return 0.0
    top = s**alpha
    marks = [(h * f) ** alpha for f in (0.01, 0.1, 1.0, 10.0) if h * f < s]

    def outer(w):
        v = w ** (1 / alpha)
        return _time_inner(v, h, alpha) * v ** (1 - alpha)

    # dv = w^(1/alpha - 1) dw / alpha = v^(1 - alpha) dw / alpha
    total = sum(integrate.quad(outer, a, b, limit=200)[0] for a, b in _pieces(0.0, top, marks))
    return total / alpha


def holder_quadrature(alpha, exponent, separations, kind="space", t=1.0):
    """Evaluate the heat-kernel integrals and fit their Hölder exponent.

    Parameters
    ----------
    alpha : float
        In ``(0, 1)``.
    exponent : float
        Claimed exponent: ``xi in (0, 2 alpha)`` for ``kind="space"``,
        ``zeta in (0, alpha)`` for ``kind="time"``.
    separations : array_like
        ``|x - y|`` values, or ``t - s`` values with ``t`` fixed.
    """
    if not (0 < alpha < 1):
        raise DomainError("alpha must lie in (0, 1)")
    limit = 2 * alpha if kind == "space" else alpha
    if not (0 < exponent < limit):
        raise DomainError(f"exponent must lie in (0, {limit})")
    seps = np.asarray(separations, dtype=float)
    if kind == "space":
        vals = np.array([heat_space_integral(alpha, d, t) for d in seps])
    elif kind == "time":
        vals = np.array([heat_time_integral(alpha, t - h, t) for h in seps])
    else:
        raise DomainError(f"kind must be 'space' or 'time', got {kind!r}")
    slope, _ = np.polyfit(np.log(seps), np.log(vals), 1)
    constant = float(np.max(vals / seps**exponent))
    return QuadratureReport(kind, alpha, exponent, seps, vals, float(slope), constant)


def wrapped_normal_l1(u, d, images=8):
    """Closed form of ``int |G_u(z) - G_u(z - d)| dz`` on the torus.

    Equals ``2 [P(|Z| < d/2) - P(|Z - 1| < d/2)]`` with ``Z`` the heat kernel
    law wrapped onto ``[-1, 1)``.
    """
    s = math.sqrt(2 * u)
    k = np.arange(-images, images + 1)
    centre = special.ndtr((d / 2 + 2 * k) / s) - special.ndtr((-d / 2 + 2 * k) / s)
    antipode = special.ndtr((1 + d / 2 + 2 * k) / s) - special.ndtr((1 - d / 2 + 2 * k) / s)
    return float(2 * (centre.sum() - antipode.sum()))


# --------------------------------------------------------------------------
# Gaussian correlation


@dataclass
class CorrelationReport:
    mu_K: float
    mu_L: float
    mu_KL: float
    se: float
    margin: float
    trials: int

    @property
    def passes(self):
        return self.margin >= -3.0 * self.se

    def to_dict(self):
        return _as_dict(self)


def gaussian_correlation_spotcheck(dim, covariance, K, L, trials, rng):
    """Monte Carlo check of ``mu(K & L) >= mu(K) mu(L)`` for symmetric boxes.

    ``K`` and ``L`` are arrays of half-widths (``inf`` leaves a coordinate
    unconstrained).  The standard error is that of ``mu(K & L) - mu(K) mu(L)``
    by the delta method.
    """
    cov = np.asarray(covariance, dtype=float)
    if cov.shape != (dim, dim):
        raise DomainError("covariance must be dim x dim")
    K = np.broadcast_to(np.asarray(K, dtype=float), (dim,))
    L = np.broadcast_to(np.asarray(L, dtype=float), (dim,))
    if np.any(K <= 0) or np.any(L <= 0):
        raise DomainError("half-widths must be > 0")
    gen = as_generator(rng)
    X = gen.multivariate_normal(np.zeros(dim), cov, size=trials, method="eigh")
    inK = np.all(np.abs(X) <= K, axis=1)
    inL = np.all(np.abs(X) <= L, axis=1)
    mK, mL, mKL = inK.mean(), inL.mean(), (inK & inL).mean()
    infl = (inK & inL).astype(float) - mL * inK - mK * inL
    se = float(infl.std(ddof=1) / math.sqrt(trials))
    return CorrelationReport(float(mK), float(mL), float(mKL), se, float(mKL - mK * mL), trials)


def random_box_pair(dim, gen):
    """A random covariance and two random symmetric boxes in ``dim`` dimensions."""
    B = gen.standard_normal((dim, dim))
    cov = B @ B.T + 0.1 * np.eye(dim)
    sd = np.sqrt(np.diag(cov))
    K = sd * gen.uniform(0.3, 2.0, dim)
    L = sd * gen.uniform(0.3, 2.0, dim)
    # leave some coordinates unconstrained so the boxes differ in shape
    L[gen.random(dim) < 0.3] = np.inf
    return cov, K, L
