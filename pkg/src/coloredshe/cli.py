"""Command line entry point.

Every subcommand writes CSV tables, a JSON summary (``"schema": 1``) and a
``manifest.json`` holding the resolved configuration, package version and
seed.  Options can also come from a flat ``key=value`` file given with
``--config``; flags on the command line win.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure,
4 failed acceptance check (with ``--check``).
"""
import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
from scipy import integrate

from . import analysis, io, kernel as kern, smallball, solver
from .exceptions import ConfigurationError, ContractError, DomainError, FitError, NumericError
from .noise import convolution_covariance
from .rng import RngSpec, WORKERS_ENV

log = logging.getLogger("coloredshe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def read_config(path):
    """Parse a flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def write_config(path, config):
    with open(path, "w") as fh:
        for key in sorted(config):
            value = config[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            fh.write(f"{key}={value}\n")


# --------------------------------------------------------------------------
# commands


def _check_gamma(g):
    if not (0 < g < 1):
        raise ConfigurationError(f"gamma must lie in (0, 1), got {g}")


def _check_positive(name, value):
    values = value if isinstance(value, (list, tuple)) else [value]
    if any(not (v > 0) for v in values):
        raise ConfigurationError(f"{name} must be > 0")


def cmd_kernel_check(args, out):
    _check_gamma(args.gamma)
    grid_t = np.array([1e-3, 1e-2, 0.1, 0.3, 1.0, 4.0])
    grid_x = np.linspace(-1, 1, 41)
    T, X = np.meshgrid(grid_t, grid_x, indexing="ij")
    dual = float(np.max(np.abs(kern.heat_kernel_image(T, X) - kern.heat_kernel_spectral(T, X))))
    xs = np.linspace(-1, 1, 4001)
    mass = max(abs(integrate.trapezoid(kern.heat_kernel(t, xs), xs) - 1.0) for t in (0.01, 0.1, 1.0))
    # semigroup: int G_s(x - z) G_t(z) dz = G_{s + t}(x)
    z = np.linspace(-1, 1, 8001)[:-1]
    s, t = 0.05, 0.1
    conv = [np.sum(kern.heat_kernel(s, x - z) * kern.heat_kernel(t, z)) * (2.0 / z.size) for x in grid_x]
    semigroup = float(np.max(np.abs(np.array(conv) - kern.heat_kernel(s + t, grid_x))))
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    slope, lower, upper = k.envelope(16, args.modes)
    k.to_csv(out / "coefficients.csv")
    checks = {
        "dual_series": (dual, dual < 1e-10),
        "mass": (mass, mass < 1e-10),
        "semigroup": (semigroup, semigroup < 1e-8),
        "coefficients_nonnegative": (float(k.q.min()), bool(np.all(k.q >= 0))),
        "envelope_slope": (slope, abs(slope - (args.gamma - 1)) <= 0.02),
    }
    for name, (value, ok) in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e}")
    summary = {name: {"value": v, "pass": ok} for name, (v, ok) in checks.items()}
    summary.update(gamma=args.gamma, modes=args.modes, envelope=[lower, upper])
    return summary, all(ok for _, ok in checks.values())


def cmd_simulate(args, out):
    _check_gamma(args.gamma)
    _check_positive("T", args.T)
    _check_positive("dt", args.dt)
    T = args.T[0]
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    rng = RngSpec(args.seed)
    if args.method == "spectral":
        path = solver.solve_constant_sigma(k, args.sigma, T, args.dt, args.dx, rng)
        finals = solver.sample_constant_sigma(k, args.sigma, T, T, args.dx, rng.substream(1),
                                              trials=args.trials, workers=args.workers)[:, -1, :]
        # the sampler is exact for the tabulated modes
        exact = args.sigma**2 * float(convolution_covariance(k, T, 0.0))
    else:
        sigma = solver.SigmaSpec.constant(args.sigma)
        path = solver.solve_general(k, sigma, None, T, args.dt, args.dx, rng)
        finals = solver.solve_general(k, sigma, None, T, args.dt, args.dx, rng.substream(1),
                                      trials=args.trials, keep="final", workers=args.workers)
        exact = args.sigma**2 * solver.scheme_variance(k, T, args.dt, args.dx)
    if args.dump_path:
        path.to_csv(out / "path.csv")
    # one lattice column, so the standard error is that of an i.i.d. mean
    col = finals[:, 0]
    var = float(np.mean(col**2))
    se = float(np.std(col**2, ddof=1) / math.sqrt(col.size))
    continuum = args.sigma**2 * analysis.variance_of_N(k, T)
    ok = abs(var - exact) <= 3 * se
    print(f"{'PASS' if ok else 'FAIL'} variance: mc={var:.6g} scheme={exact:.6g} se={se:.2g} "
          f"continuum={continuum:.6g}")
    return dict(method=args.method, T=T, variance_mc=var, variance_se=se, variance_scheme=exact,
                variance_continuum=continuum, sup=float(path.sup()), **{"pass": ok}), ok


def _smallball_config(args, eps):
    if args.dx is not None:
        dt = args.dt if args.dt is not None else 1e-3
        return smallball.SimulationConfig(args.gamma, args.dx, dt, args.modes_sim, args.sigma)
    return smallball.scaled_config(eps, args.gamma, args.points_per_cell, args.steps_per_cell,
                                   args.sigma)


def cmd_smallball(args, out):
    _check_gamma(args.gamma)
    _check_positive("eps", args.eps)
    _check_positive("T", args.T)
    if args.trials < 1:
        raise ConfigurationError("trials must be >= 1")
    base = RngSpec(args.seed)
    results = []
    for i, eps in enumerate(args.eps):
        cfg = _smallball_config(args, eps)
        rng = base.substream(i)
        if args.method == "splitting":
            results += smallball.splitting_small_ball(eps, args.T, args.trials, cfg, rng,
                                                      args.replicates, args.workers)
        else:
            sups = smallball.running_sup(cfg, args.T, args.trials, rng, args.workers)
            results += smallball.small_ball_table(sups, [eps], args.T, cfg)
    rows = [r.as_row() for r in results]
    io.write_csv(out / "smallball.csv", rows, io.SMALLBALL_COLUMNS)
    summary = {"results": rows}
    ok = True
    fits = {}
    for T in args.T:
        at_T = [r for r in results if r.T == T]
        try:
            fit = smallball.fit_exponent(at_T, args.gamma)
        except FitError:
            continue
        fits[repr(T)] = dict(theta_hat=fit.theta_hat, stderr=fit.stderr, bracket=list(fit.bracket),
                             inside=fit.inside)
        ok &= fit.inside
        print(f"{'PASS' if fit.inside else 'FAIL'} exponent T={T}: theta_hat={fit.theta_hat:.3f} "
              f"+- {fit.stderr:.3f}, bracket=({fit.bracket[0]:.4g}, {fit.bracket[1]:.4g})")
    summary["exponent_fits"] = fits
    if len(args.T) >= 3:
        lin = {}
        for eps in args.eps:
            rep = smallball.rate_linearity_in_T([r for r in results if r.epsilon == eps])
            lin[repr(eps)] = dict(slope=rep.slope, intercept=rep.intercept, r_squared=rep.r_squared,
                                  monotone=rep.monotone)
            ok &= rep.r_squared >= 0.95 and rep.monotone
        summary["linearity"] = lin
    if args.svg and fits:
        T0 = args.T[0]
        at = [r for r in results if r.T == T0 and np.isfinite(r.log_p_hat)]
        fit = fits.get(repr(T0))
        if fit:
            io.loglog_svg(out / "exponent.svg", [r.epsilon for r in at], [-r.log_p_hat for r in at],
                          (-fit["theta_hat"], smallball.fit_exponent(at, args.gamma).intercept),
                          "epsilon", "-log p")
    return summary, ok


def cmd_exponent_fit(args, out):
    if args.input is None:
        raise ConfigurationError("exponent-fit needs --in")
    rows = io.read_csv(args.input)
    results = []
    for row in rows:
        lp = float(row["log_p_hat"]) if row.get("log_p_hat") not in (None, "") else math.log(float(row["p_hat"]))
        lo = float(row["log_ci_lo"]) if row.get("log_ci_lo") not in (None, "") else lp
        hi = float(row["log_ci_hi"]) if row.get("log_ci_hi") not in (None, "") else lp
        results.append(smallball.SmallBallResult(
            float(row["epsilon"]), float(row.get("T") or 1.0), int(float(row.get("trials") or 0)),
            int(float(row.get("hits") or 0)), math.exp(lp), math.exp(lo), math.exp(hi), lp, lo, hi,
            row.get("method") or "table"))
    T = args.T[0] if args.T_given else results[0].T
    fit = smallball.fit_exponent([r for r in results if r.T == T], args.gamma)
    print(f"{'PASS' if fit.inside else 'FAIL'} theta_hat={fit.theta_hat:.4f} +- {fit.stderr:.4f}")
    summary = dict(gamma=args.gamma, T=T, theta_hat=fit.theta_hat, stderr=fit.stderr,
                   bracket=list(fit.bracket), inside=fit.inside, points=fit.points)
    return summary, fit.inside


def cmd_variance(args, out):
    _check_gamma(args.gamma)
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    slope, ts, var = analysis.variance_slope(k)
    io.write_csv(out / "variance.csv", [dict(t1=t, variance=v) for t, v in zip(ts, var)], ["t1", "variance"])
    dec = analysis.covariance_decay(k, args.t1_cov)
    io.write_csv(out / "covariance.csv", [dict(separation=d, covariance=c) for d, c in
                                          zip(dec.separations, dec.covariance)], ["separation", "covariance"])
    # Monte Carlo at t1 = args.t1_mc on the lattice of separations
    gen = RngSpec(args.seed).generator(0)
    seps = np.array([0.0, 0.02, 0.05, 0.1, 0.2, 0.5])
    a, b = analysis._sample_state(k, args.t1_mc, args.trials, gen)
    n = np.arange(k.mode_count + 1)
    f0 = a.sum(axis=1)
    fd = a @ np.cos(np.pi * np.multiply.outer(n, seps)) + b @ np.sin(np.pi * np.multiply.outer(n[1:], seps))
    prod = f0[:, None] * fd
    mc = prod.mean(axis=0)
    se = prod.std(axis=0, ddof=1) / math.sqrt(args.trials)
    series = analysis.covariance_of_N(k, args.t1_mc, seps)
    mc_ok = bool(np.all(np.abs(mc - series) <= 3 * se))
    var_ok = abs(slope - (2 - args.gamma) / 2) <= 0.05
    cov_ok = abs(dec.slope + args.gamma) <= 0.1
    for name, ok, val in (("variance_slope", var_ok, slope), ("covariance_slope", cov_ok, dec.slope)):
        print(f"{'PASS' if ok else 'FAIL'} {name}: {val:.4f}")
    print(f"{'PASS' if mc_ok else 'FAIL'} monte_carlo: max |z| = {np.max(np.abs(mc - series) / se):.2f}")
    if args.svg:
        io.loglog_svg(out / "variance.svg", ts, var, (slope, np.polyfit(np.log(ts), np.log(var), 1)[1]),
                      "t1", "Var N(t1)")
    summary = dict(variance_slope=slope, covariance_slope=dec.slope, C8=dec.C8,
                   mc_separations=seps, mc=mc, mc_se=se, series=series,
                   checks=dict(variance_slope=var_ok, covariance_slope=cov_ok, monte_carlo=mc_ok))
    return summary, var_ok and cov_ok and mc_ok


def cmd_regularity(args, out):
    _check_gamma(args.gamma)
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    base = RngSpec(args.seed)
    reports = {
        "space": analysis.regularity_scan(k, "space", args.base, np.logspace(math.log10(0.0025), -1, 8),
                                          args.trials, base.substream(0)),
        "time": analysis.regularity_scan(k, "time", args.base, np.logspace(-6, -4, 8), args.trials,
                                         base.substream(1)),
    }
    rows = []
    for name, rep in reports.items():
        print(f"{'PASS' if rep.passes else 'FAIL'} {name}: slope={rep.slope:.4f} expected={rep.expected:.4f}")
        rows += [dict(direction=name, lag=h, msq=m, se=s, exact=e)
                 for h, m, s, e in zip(rep.lags, rep.msq, rep.msq_se, rep.exact)]
    io.write_csv(out / "regularity.csv", rows, ["direction", "lag", "msq", "se", "exact"])
    return {name: rep.to_dict() for name, rep in reports.items()}, all(r.passes for r in reports.values())


def cmd_tails(args, out):
    _check_gamma(args.gamma)
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    base = RngSpec(args.seed)
    inc = analysis.increment_tail_check(k, ((0.5, 0.0), (0.5, 0.1)), trials=args.trials, rng=base.substream(0))
    ratio, expected, first, second = analysis.beta_doubling_ratio(k, args.beta, args.eps[0], args.trials,
                                                                  base.substream(1))
    ratio_ok = abs(ratio / expected - 1) <= 0.2
    print(f"{'PASS' if inc.passes else 'FAIL'} increment envelope: c1={inc.c1:.3f} c2={inc.c2:.3f}")
    for rep in (first, second):
        print(f"{'PASS' if rep.passes else 'FAIL'} sup envelope beta={rep.beta:g}: c1={rep.c1:.3f} c2={rep.c2:.3f}")
    print(f"{'PASS' if ratio_ok else 'FAIL'} beta doubling: ratio={ratio:.4f} expected={expected:.4f}")
    rows = [dict(kind="increment", beta="", z=z, freq=f, envelope=e) for z, f, e in zip(inc.z, inc.freq, inc.envelope)]
    for rep in (first, second):
        rows += [dict(kind="sup", beta=rep.beta, z=z, freq=f, envelope=e)
                 for z, f, e in zip(rep.z, rep.freq, rep.envelope)]
    io.write_csv(out / "tails.csv", rows, ["kind", "beta", "z", "freq", "envelope"])
    ok = inc.passes and first.passes and second.passes and ratio_ok
    return dict(increment=inc.to_dict(), sup=[first.to_dict(), second.to_dict()], ratio=ratio,
                expected_ratio=expected), ok


def cmd_eta(args, out):
    _check_gamma(args.gamma)
    _check_positive("C0", args.C0)
    k = kern.cached_riesz_coefficients(args.gamma, args.modes)
    sweep = analysis.eta_sweep(k, args.eps[0], args.C0)
    rows = [dict(C0=c, norm_11=n, eta_l1=e) for c, n, e in zip(sweep.C0, sweep.norm_11, sweep.eta_l1)]
    io.write_csv(out / "eta.csv", rows, ["C0", "norm_11", "eta_l1"])
    for r in rows:
        print(f"C0={r['C0']:.3g} norm_11={r['norm_11']:.4f} eta_l1={r['eta_l1']:.4f}")
    ok = sweep.monotone and sweep.implication_holds and bool(np.any(sweep.norm_11 < 1 / 3))
    print(f"{'PASS' if ok else 'FAIL'} eta chain: monotone={sweep.monotone} implication={sweep.implication_holds}")
    return sweep.to_dict(), ok


def cmd_factorize(args, out):
    rng = RngSpec(args.seed)
    rows, ok = [], True
    for n in range(args.max_mode + 1):
        rep = solver.factorization_check(args.alpha, n, args.T[0], args.dt_fine, rng, gamma=args.gamma)
        rows.append(dict(mode=n, lhs=rep.lhs, rhs=rep.rhs, rel_err=rep.rel_err))
        good = rep.rel_err <= 1e-2
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} mode {n}: rel_err={rep.rel_err:.3e}")
    io.write_csv(out / "factorization.csv", rows, ["mode", "lhs", "rhs", "rel_err"])
    return dict(alpha=args.alpha, T=args.T[0], dt_fine=args.dt_fine, modes=rows), ok


COMMANDS = {
    "kernel-check": cmd_kernel_check,
    "simulate": cmd_simulate,
    "smallball": cmd_smallball,
    "exponent-fit": cmd_exponent_fit,
    "variance": cmd_variance,
    "regularity": cmd_regularity,
    "tails": cmd_tails,
    "eta": cmd_eta,
    "factorize": cmd_factorize,
}

# options of each command, with defaults
_DEFAULTS = {
    "gamma": 0.5, "seed": 0, "modes": 4096, "trials": None, "T": None, "eps": None,
    "dx": None, "dt": None, "sigma": 1.0, "method": None, "replicates": 8,
    "points_per_cell": 4, "steps_per_cell": 8, "modes_sim": None, "C0": None,
    "beta": 1.0, "alpha": 0.2, "dt_fine": 1e-5, "max_mode": 4, "t1_cov": 1e-6, "t1_mc": 1e-3,
    "base": 1.0, "input": None, "dump_path": False,
}

_COMMAND_DEFAULTS = {
    "kernel-check": {},
    "simulate": dict(T=[1e-3], dt=1e-5, dx=1 / 32, trials=10_000, method="spectral", modes=256),
    "smallball": dict(eps=[0.35, 0.3, 0.25, 0.2], T=[1.0], trials=20_000, method="splitting"),
    "exponent-fit": dict(T=[1.0]),
    "variance": dict(trials=10_000),
    "regularity": dict(trials=10_000),
    "tails": dict(trials=10_000, eps=[0.3]),
    "eta": dict(eps=[0.2], C0=[1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]),
    "factorize": dict(T=[0.05]),
}

_TYPES = {
    "gamma": float, "seed": int, "modes": int, "trials": int, "T": _floats, "eps": _floats,
    "dx": float, "dt": float, "sigma": float, "method": str, "replicates": int,
    "points_per_cell": int, "steps_per_cell": int, "modes_sim": int, "C0": _floats,
    "beta": float, "alpha": float, "dt_fine": float, "max_mode": int, "t1_cov": float,
    "t1_mc": float, "base": float, "input": str, "dump_path": lambda v: str(v).lower() in ("1", "true", "yes"),
    "workers": int, "check": lambda v: str(v).lower() in ("1", "true", "yes"),
    "svg": lambda v: str(v).lower() in ("1", "true", "yes"),
}


def build_parser():
    parser = _Parser(prog="coloredshe", description="Colored-noise stochastic heat equation laboratory")
    sub = parser.add_subparsers(dest="command")
    for name in list(COMMANDS) + ["all"]:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value file; flags override it")
        p.add_argument("--out", help="output directory (default results/<command>)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help=f"worker threads (also {WORKERS_ENV})")
        p.add_argument("--check", action="store_true", default=None, help="exit 4 if a check fails")
        p.add_argument("--svg", action="store_true", default=None, help="also write SVG plots")
        p.add_argument("--gamma", type=float)
        p.add_argument("--modes", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--T", type=_floats)
        p.add_argument("--eps", type=_floats)
        p.add_argument("--dx", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--method")
        p.add_argument("--replicates", type=int)
        p.add_argument("--points-per-cell", type=int)
        p.add_argument("--steps-per-cell", type=int)
        p.add_argument("--modes-sim", type=int)
        p.add_argument("--C0", type=_floats)
        p.add_argument("--beta", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--dt-fine", type=float)
        p.add_argument("--max-mode", type=int)
        p.add_argument("--t1-cov", type=float)
        p.add_argument("--t1-mc", type=float)
        p.add_argument("--base", type=float)
        p.add_argument("--in", dest="input")
        p.add_argument("--dump-path", action="store_true", default=None)
    return parser


def resolve(command, ns):
    """Merge defaults, config file and flags into one plain dict."""
    cfg = dict(_DEFAULTS)
    cfg.update(_COMMAND_DEFAULTS.get(command, {}))
    cfg.update(workers=None, check=False, svg=False)
    file_cfg = {}
    if ns.config:
        for key, value in read_config(ns.config).items():
            if key not in _TYPES:
                raise ConfigurationError(f"unknown config key {key!r}")
            file_cfg[key] = _TYPES[key](value)
    cfg.update(file_cfg)
    flags = {k: v for k, v in vars(ns).items() if v is not None and k not in ("config", "out", "command")}
    cfg.update(flags)
    cfg["T_given"] = "T" in flags or "T" in file_cfg
    if cfg["method"] is not None and command == "smallball" and cfg["method"] not in ("splitting", "direct"):
        raise ConfigurationError("smallball method must be 'splitting' or 'direct'")
    if cfg["method"] is not None and command == "simulate" and cfg["method"] not in ("spectral", "fd"):
        raise ConfigurationError("simulate method must be 'spectral' or 'fd'")
    return cfg


def _run_one(command, cfg, out):
    args = argparse.Namespace(**cfg)
    out.mkdir(parents=True, exist_ok=True)
    summary, ok = COMMANDS[command](args, out)
    manifest_cfg = {k: v for k, v in cfg.items() if k not in ("T_given", "workers")}
    io.write_json(out / "summary.json", dict(command=command, passed=bool(ok), **summary))
    io.write_manifest(out / "manifest.json", command, manifest_cfg, cfg["seed"])
    write_config(out / "config.txt", {k: v for k, v in manifest_cfg.items() if v is not None})
    return ok


def run(argv=None):
    """Execute a subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required")
        base_out = Path(ns.out) if ns.out else Path("results")
        if ns.command == "all":
            ok = True
            for name in COMMANDS:
                if name == "exponent-fit":
                    continue
                cfg = resolve(name, ns)
                ok &= _run_one(name, cfg, base_out / name)
        else:
            cfg = resolve(ns.command, ns)
            out = Path(ns.out) if ns.out else base_out / ns.command
            ok = _run_one(ns.command, cfg, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, DomainError, FitError, FileNotFoundError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ContractError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not ok and cfg.get("check"):
        return EXIT_CHECK
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
