"""Small-ball probabilities of the solution started from zero.

The quantity of interest is

    p(eps, T) = P( sup_{0 <= t <= T, x in torus} |u(t, x)| <= eps ),

estimated on the space-time lattice of an exact spectral simulation
(constant sigma).  Two estimators are available:

* direct Monte Carlo with exact Clopper-Pearson intervals, usable while
  ``p`` is not too small;
* fixed-effort splitting in time.  The spectral amplitudes are a Markov
  state, so survivors at each output step are cloned back to the full
  population; the product of survival fractions is an unbiased estimate of
  ``p`` and works down to ``p ~ exp(-1000)``.

The module also builds the eps-dependent space-time grid used to discretise
the smallness events, and fits the decay exponent theta in
``-log p ~ T eps^-theta``.
"""
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .exceptions import CoverageError, DomainError, FitError
from .kernel import cached_riesz_coefficients
from .noise import OUTransition, basis, default_modes
from .rng import RngSpec, map_blocks, trial_blocks
from .solver import lattice_positions, step_count


class AdmissibilityWarning(UserWarning):
    """The temporal coefficient is too large for the coefficient control."""


# --------------------------------------------------------------------------
# grid and events


def theta_bracket(gamma):
    """Exponents ``((2g + 4) / (2 - g), (2g + 4) / (g (2 - g)))``."""
    upper = (2 * gamma + 4) / (2 - gamma)
    lower = (2 * gamma + 4) / (gamma * (2 - gamma))
    return upper, lower


@dataclass(frozen=True)
class GridSpec:
    """Space-time grid ``t_i = i c0 eps^4``, ``x_j = j eps^2``."""

    epsilon: float
    gamma: float
    C0: float
    T: float
    c0: float
    t1: float
    n1: int

    @property
    def indices(self):
        """Spatial indices ``-n1 + 1 .. n1 - 1``."""
        return np.arange(-self.n1 + 1, self.n1)

    @property
    def positions(self):
        return self.indices * self.epsilon**2

    @property
    def distinct_indices(self):
        """Indices whose positions are distinct points of the torus.

        When ``eps^-2`` is an integer the end points ``x = -1`` and ``x = 1``
        coincide on the torus; the last index is then dropped.
        """
        idx = self.indices
        span = (idx[-1] - idx[0]) * self.epsilon**2
        if abs(span - 2.0) <= 1e-9:
            return idx[:-1]
        return idx

    @property
    def time_count(self):
        """Largest ``n`` with ``t_n <= T``."""
        return int(math.floor(self.T / self.t1 + 1e-9))

    def time(self, n):
        return n * self.t1

    @property
    def threshold_F(self):
        return self.t1 ** ((2 - self.gamma) / 4)

    @property
    def threshold_E(self):
        return self.epsilon ** (2 - self.gamma)


def make_grid(epsilon, gamma, C0, T=1.0, kernel=None):
    """Build the grid; with ``kernel`` given, warn if ``c0`` is not admissible.

    Admissibility means the off-diagonal correlation mass of the grid
    covariance stays below 1/3 (see :func:`coloredshe.analysis.eta_report`).
    """
    if not (0.0 < gamma < 1.0):
        raise DomainError(f"gamma must lie in (0, 1), got {gamma}")
    if not (0.0 < epsilon < 1.0):
        raise DomainError("epsilon must lie in (0, 1)")
    if not C0 > 0:
        raise DomainError("C0 must be > 0")
    c0 = C0 * epsilon ** ((4 - 4 * gamma) / gamma)
    t1 = c0 * epsilon**4
    # smallest n with n eps^2 > 1; guard against round-off at exact multiples
    n1 = int(math.floor(1.0 / epsilon**2 * (1 + 1e-12))) + 1
    grid = GridSpec(float(epsilon), float(gamma), float(C0), float(T), c0, t1, n1)
    if kernel is not None:
        from .analysis import eta_report

        report = eta_report(kernel, grid, solve=False)
        if report.norm_11 >= 1.0 / 3.0:
            warnings.warn(f"c0={c0:.3g} not admissible: ||A||_11={report.norm_11:.3g} >= 1/3",
                          AdmissibilityWarning, stacklevel=2)
    return grid


def _grid_columns(path, grid):
    try:
        return path.space_index(grid.positions)
    except CoverageError:
        raise CoverageError("grid positions fall outside the path lattice") from None


def event_F(path, grid, n):
    """``|u(t_n, x_j)| <= t1^((2 - gamma) / 4)`` at every grid point."""
    m = path.time_index(grid.time(n))
    cols = _grid_columns(path, grid)
    return bool(np.all(np.abs(path.values[m, cols]) <= grid.threshold_F))


def event_E(path, grid, n):
    """Slab event on ``[t_n, t_{n+1}] x [-1, 1]``.

    True iff ``|u| <= eps^(2 - gamma)`` at every lattice node of the slab and
    ``|u| <= eps^(2 - gamma) / 3`` on the row nearest ``t_{n+1}``.
    """
    t_lo, t_hi = grid.time(n), grid.time(n + 1)
    if t_hi > path.horizon * (1 + 1e-9):
        raise CoverageError(f"t_(n+1)={t_hi} beyond path horizon {path.horizon}")
    m_end = path.time_index(t_hi)
    m_lo = int(math.ceil(t_lo / path.dt - 1e-9))
    m_hi = int(math.floor(t_hi / path.dt + 1e-9))
    slab = path.values[m_lo: m_hi + 1] if m_hi >= m_lo else path.values[m_end: m_end + 1]
    thr = grid.threshold_E
    return bool(np.all(np.abs(slab) <= thr) and np.all(np.abs(path.values[m_end]) <= thr / 3.0))


def all_events(path, grid, which="F"):
    """Intersection of the events over every grid time covered by the path."""
    if which == "F":
        count = min(grid.time_count, int(math.floor(path.horizon / grid.t1 + 1e-9)))
        return all(event_F(path, grid, n) for n in range(count + 1))
    count = int(math.floor(path.horizon / grid.t1 + 1e-9)) - 1
    return all(event_E(path, grid, n) for n in range(count + 1))


# --------------------------------------------------------------------------
# simulation configuration


@dataclass(frozen=True)
class SimulationConfig:
    """Lattice and spectral resolution for small-ball runs."""

    gamma: float = 0.5
    dx: float = 1.0 / 32.0
    dt: float = 1e-3
    modes: int = None
    sigma: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise DomainError("gamma must lie in (0, 1)")
        lattice_positions(self.dx)
        if not self.dt > 0:
            raise DomainError("dt must be > 0")
        if self.modes is None:
            object.__setattr__(self, "modes", default_modes(self.dx))
        if int(self.modes) < 1:
            raise DomainError("modes must be >= 1")

    def kernel(self):
        return cached_riesz_coefficients(self.gamma, int(self.modes))

    def engine(self):
        return _Engine(self)


def cell_scale(epsilon, gamma):
    """Width ``h = eps^(2 / (2 - gamma))`` of a cell where increments reach ``eps``."""
    return epsilon ** (2.0 / (2.0 - gamma))


def scaled_config(epsilon, gamma=0.5, points_per_cell=4, steps_per_cell=8, sigma=1.0):
    """Lattice resolving the natural cell ``h x h^2`` with fixed counts.

    Keeping the number of lattice nodes per cell fixed makes the lattice
    discretisation bias of ``-log p`` a common factor across epsilon, so it
    drops out of the fitted exponent.  Modes match the lattice point count.
    """
    h = cell_scale(epsilon, gamma)
    J = 2 * int(math.ceil(points_per_cell / h))
    # an even number of steps per unit time, so horizons 0.5, 1, 2 fit exactly
    dt = 1.0 / (2 * int(math.ceil(steps_per_cell / (2 * h * h))))
    return SimulationConfig(gamma=gamma, dx=2.0 / J, dt=dt, modes=J, sigma=sigma)


class _Engine:
    """Shared pieces of a spectral lattice simulation."""

    def __init__(self, config):
        self.config = config
        kernel = config.kernel()
        self.trans = OUTransition.build(kernel, config.dt)
        xs, J = lattice_positions(config.dx)
        self.C, self.S = basis(xs[:J], kernel.mode_count)
        self.N = kernel.mode_count

    def zeros(self, n):
        return np.zeros((n, self.N + 1)), np.zeros((n, self.N))

    def step(self, a, b, gen):
        self.trans.advance(a, b, gen, self.config.sigma)
        return a @ self.C + b @ self.S


# --------------------------------------------------------------------------
# results


@dataclass
class SmallBallResult:
    """Estimate of ``P(sup |u| <= epsilon)`` over ``[0, T]``.

    For ``method="direct"`` the interval is Clopper-Pearson at 95% and
    ``p_hat = hits / trials``.  For ``method="splitting"``, ``trials`` is the
    total particle count, ``hits`` the survivors of the last stage and the
    interval on ``log p`` is a t-interval from the spread of independent
    replicate log-estimates.
    """

    epsilon: float
    T: float
    trials: int
    hits: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    log_p_hat: float
    log_ci_lo: float
    log_ci_hi: float
    method: str = "direct"
    low_information: bool = False
    dx: float = None
    dt: float = None
    modes: int = None
    gamma: float = None

    def as_row(self):
        return asdict(self)

    @property
    def log_se(self):
        """Approximate standard error of ``log p_hat``."""
        if not np.isfinite(self.log_p_hat):
            return math.inf
        return (self.log_ci_hi - self.log_ci_lo) / (2 * 1.96)


def clopper_pearson(hits, trials, level=0.95):
    alpha = 1 - level
    lo = 0.0 if hits == 0 else float(stats.beta.ppf(alpha / 2, hits, trials - hits + 1))
    hi = 1.0 if hits == trials else float(stats.beta.ppf(1 - alpha / 2, hits + 1, trials - hits))
    return lo, hi


def binomial_result(epsilon, T, hits, trials, config=None):
    hits, trials = int(hits), int(trials)
    p = hits / trials
    low = hits == 0
    if low:
        lo, hi = 0.0, min(1.0, 3.0 / trials)
    else:
        lo, hi = clopper_pearson(hits, trials)

    def log(v):
        return math.log(v) if v > 0 else -math.inf

    extra = {}
    if config is not None:
        extra = dict(dx=config.dx, dt=config.dt, modes=int(config.modes), gamma=config.gamma)
    return SmallBallResult(float(epsilon), float(T), trials, hits, p, lo, hi,
                           log(p), log(lo), log(hi), "direct", low, **extra)


# --------------------------------------------------------------------------
# direct Monte Carlo


def running_sup(config, times, trials, rng, workers=None):
    """Per-trial running lattice sup of ``|u|`` at each of ``times``.

    Returns an array ``(trials, len(times))``; column ``k`` is
    ``max |u|`` over lattice nodes with ``t <= times[k]``.  Since the same
    paths serve every column, derived probabilities are pathwise monotone.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    steps = [step_count(t, config.dt) for t in times]
    last = max(steps)
    rng = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    engine = config.engine()
    out = np.empty((trials, times.size))

    def run(block):
        b, start, stop = block
        gen = rng.generator(b)
        a, bb = engine.zeros(stop - start)
        sup = np.zeros(stop - start)
        for m in range(1, last + 1):
            field_ = engine.step(a, bb, gen)
            np.maximum(sup, np.abs(field_).max(axis=1), out=sup)
            for k, s in enumerate(steps):
                if s == m:
                    out[start:stop, k] = sup

    map_blocks(run, trial_blocks(trials), workers)
    return out


def estimate_small_ball(epsilon_ball, T, trials, config, rng, workers=None):
    """Direct Monte Carlo estimate with an exact binomial interval."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    sups = running_sup(config, [T], trials, rng, workers)[:, 0]
    hits = int(np.count_nonzero(sups <= epsilon_ball))
    return binomial_result(epsilon_ball, T, hits, trials, config)


def small_ball_table(sups, epsilons, Ts, config=None):
    """Results for every ``(epsilon, T)`` from a :func:`running_sup` array."""
    trials = sups.shape[0]
    rows = []
    for k, T in enumerate(Ts):
        for eps in epsilons:
            hits = int(np.count_nonzero(sups[:, k] <= eps))
            rows.append(binomial_result(eps, T, hits, trials, config))
    return rows


# --------------------------------------------------------------------------
# splitting


def _split_replicate(engine, epsilon_ball, checkpoints, particles, gen):
    """One fixed-effort splitting run; returns log-probabilities at checkpoints."""
    last = max(checkpoints)
    a, b = engine.zeros(particles)
    log_p = 0.0
    logs = {}
    survivors = particles
    for m in range(1, last + 1):
        field_ = engine.step(a, b, gen)
        alive = np.abs(field_).max(axis=1) <= epsilon_ball
        survivors = int(np.count_nonzero(alive))
        if survivors == 0:
            log_p = -math.inf
            for s in checkpoints:
                if s >= m:
                    logs[s] = -math.inf
            return [logs[s] for s in checkpoints], 0
        log_p += math.log(survivors / particles)
        if m in checkpoints:
            logs[m] = log_p
        if survivors < particles:
            idx = np.flatnonzero(alive)
            dead = np.flatnonzero(~alive)
            parents = gen.choice(idx, size=dead.size, replace=True)
            a[dead] = a[parents]
            b[dead] = b[parents]
    return [logs[s] for s in checkpoints], survivors


def splitting_small_ball(epsilon_ball, Ts, particles, config, rng, replicates=8, workers=None):
    """Fixed-effort splitting estimates of ``p(epsilon_ball, T)`` for each ``T``.

    Parameters
    ----------
    epsilon_ball : float
    Ts : float or sequence of float
        Horizons; a single run to ``max(Ts)`` serves all of them.
    particles : int
        Total particles, split evenly over ``replicates`` independent runs.
    replicates : int
        Independent runs used for the confidence interval (>= 2).

    Returns
    -------
    list of SmallBallResult (one per horizon, in input order)
    """
    Ts = np.atleast_1d(np.asarray(Ts, dtype=float))
    if replicates < 2:
        raise DomainError("need at least two replicates for an interval")
    per = particles // replicates
    if per < 2:
        raise DomainError("too few particles per replicate")
    checkpoints = [step_count(T, config.dt) for T in Ts]
    rng = rng if isinstance(rng, RngSpec) else RngSpec(int(rng))
    engine = config.engine()

    def run(r):
        return _split_replicate(engine, epsilon_ball, checkpoints, per, rng.generator(r))

    runs = map_blocks(run, list(range(replicates)), workers)
    logs = np.array([r[0] for r in runs])  # (replicates, len(Ts))
    final_survivors = int(sum(r[1] for r in runs))
    tcrit = stats.t.ppf(0.975, replicates - 1)
    results = []
    for k, T in enumerate(Ts):
        col = logs[:, k]
        if not np.any(np.isfinite(col)):
            res = SmallBallResult(float(epsilon_ball), float(T), per * replicates, 0, 0.0, 0.0, 0.0,
                                  -math.inf, -math.inf, -math.inf, "splitting", True)
        else:
            log_mean = float(logsumexp(col) - math.log(replicates))
            finite = col[np.isfinite(col)]
            spread = float(np.std(finite, ddof=1)) if finite.size > 1 else math.inf
            half = tcrit * spread / math.sqrt(replicates)
            log_lo, log_hi = log_mean - half, log_mean + half
            res = SmallBallResult(float(epsilon_ball), float(T), per * replicates,
                                  final_survivors if k == int(np.argmax(Ts)) else -1,
                                  math.exp(log_mean), math.exp(log_lo), min(1.0, math.exp(log_hi)),
                                  log_mean, log_lo, min(0.0, log_hi), "splitting",
                                  not np.all(np.isfinite(col)))
        res.dx, res.dt, res.modes, res.gamma = config.dx, config.dt, int(config.modes), config.gamma
        results.append(res)
    return results


# --------------------------------------------------------------------------
# exponent fits


@dataclass
class ExponentFit:
    """Fit of ``log(-log p) = c - theta log eps``."""

    gamma: float
    theta_hat: float
    stderr: float
    intercept: float
    bracket: tuple
    points: int
    inside: bool = field(default=False)

    def __post_init__(self):
        lo, hi = self.bracket
        delta = 2.0 * self.stderr
        self.inside = bool(self.theta_hat + delta >= lo and self.theta_hat - delta <= hi)


def _wls(x, y, w, floor=True):
    """Weighted least squares with residual-scaled standard errors.

    With ``floor=False`` the weights are relative only and the scale comes
    from the residuals alone (ordinary least squares when ``w`` is constant).
    """
    X = np.column_stack([np.ones_like(x), x])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ y
    resid = y - X @ beta
    dof = x.size - 2
    scale = float(resid @ W @ resid / dof) if dof > 0 else 1.0
    # never report less uncertainty than the per-point errors alone imply
    se = np.sqrt(np.diag(cov) * (max(scale, 1.0) if floor else scale))
    return beta, se, resid


def fit_exponent(results, gamma):
    """Fit theta from results at a common horizon.

    Points need ``0 < p_hat < 1``.  Weights come from each result's log
    standard error; the reported standard error is inflated by the residual
    scatter when the model misfits.

    Raises
    ------
    FitError
        With fewer than three usable epsilon values.
    """
    usable = [r for r in results if np.isfinite(r.log_p_hat) and r.log_p_hat < 0]
    eps = sorted({r.epsilon for r in usable})
    if len(eps) < 3:
        raise FitError("need >= 3 distinct epsilon values with nonzero hits")
    x = np.array([math.log(r.epsilon) for r in usable])
    L = np.array([-r.log_p_hat for r in usable])
    y = np.log(L)
    se_log_p = np.array([r.log_se for r in usable])
    se_y = np.where(np.isfinite(se_log_p), se_log_p / L, np.nan)
    known = bool(np.any(se_y > 0))
    if not known:
        # no per-point errors: plain least squares, residual standard errors
        w = np.ones_like(y)
    else:
        floor = np.nanmin(se_y[se_y > 0]) if np.any(se_y > 0) else 1.0
        se_y = np.where(np.isnan(se_y) | (se_y <= 0), floor, se_y)
        w = 1.0 / se_y**2
    beta, se, _ = _wls(x, y, w, floor=known)
    return ExponentFit(gamma, float(-beta[1]), float(se[1]), float(beta[0]), theta_bracket(gamma), len(usable))


def synthetic_results(epsilons, log_p, T=1.0, rel_se=1e-3):
    """Results with prescribed log-probabilities (for constructed inputs)."""
    out = []
    for eps, lp in zip(epsilons, log_p):
        half = 1.96 * rel_se
        out.append(SmallBallResult(float(eps), float(T), 0, 0, math.exp(lp), math.exp(lp - half),
                                   math.exp(lp + half), float(lp), lp - half, lp + half, "synthetic"))
    return out


@dataclass
class LinearityReport:
    slope: float
    intercept: float
    r_squared: float
    slope_positive: bool
    monotone: bool


def rate_linearity_in_T(results):
    """Fit ``-log p_hat = intercept + slope T`` over horizons.

    ``results`` are SmallBallResults at a common epsilon (>= 3 horizons).
    """
    usable = [r for r in results if np.isfinite(r.log_p_hat)]
    if len({r.T for r in usable}) < 3:
        raise FitError("need >= 3 horizons with nonzero hits")
    usable.sort(key=lambda r: r.T)
    T = np.array([r.T for r in usable])
    y = -np.array([r.log_p_hat for r in usable])
    slope, intercept = np.polyfit(T, y, 1)
    pred = intercept + slope * T
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    p = np.array([r.p_hat for r in usable])
    return LinearityReport(float(slope), float(intercept), r2, bool(slope > 0), bool(np.all(np.diff(p) <= 0)))


def window_process_probability(rho, windows):
    """Success probability of ``windows`` independent windows each passing w.p. ``rho``."""
    return rho**windows
