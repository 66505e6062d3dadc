"""Result persistence: CSV tables, JSON summaries, run manifests, SVG plots.

Nothing written here contains timestamps or host details, so a rerun with
the same manifest reproduces every file byte for byte.
"""
import csv
import json
import math
from pathlib import Path

import numpy as np

SCHEMA = 1


def _clean(value):
    """Make ``value`` JSON-serialisable with stable float formatting."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path, payload):
    payload = dict(payload)
    payload.setdefault("schema", SCHEMA)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, rows, columns):
    """Write dict rows with a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


SMALLBALL_COLUMNS = ["gamma", "epsilon", "T", "dx", "dt", "modes", "trials", "hits", "p_hat",
                     "ci_lo", "ci_hi", "log_p_hat", "log_ci_lo", "log_ci_hi", "method"]


def write_manifest(path, command, config, seed):
    from . import __version__

    return write_json(path, {"command": command, "version": __version__, "seed": int(seed),
                             "config": config})


def loglog_svg(path, x, y, fit=None, xlabel="x", ylabel="y", title=None):
    """Log-log scatter with an optional fitted line ``(slope, intercept)``.

    Requires matplotlib; returns None when it is unavailable.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    matplotlib.rcParams["svg.hashsalt"] = "coloredshe"
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(x, y, "o", ms=4)
    if fit is not None:
        slope, intercept = fit
        xs = np.array([np.min(x), np.max(x)])
        ax.loglog(xs, np.exp(intercept) * xs**slope, "-", lw=1, label=f"slope {slope:.3f}")
        ax.legend()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
