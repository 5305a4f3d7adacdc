"""
Result files: benchmark tables, posterior exports and histogram plots

Outputs are deterministic for a given configuration; timing only goes to the log.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from scipy.stats import norm  # noqa: E402

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
TABLE_COLUMNS = ("Method", "Abs. error", "Size CI", "Coverage", "Type II error")


def _pm(mean, sd, digits=3):
    if not np.isfinite(mean):
        return "n/a"
    return f"{mean:.{digits}f} ± {sd:.{digits}f}"


def _rate(value, digits=2):
    return "n/a" if not np.isfinite(value) else f"{value:.{digits}f}"


def summary_frame(report) -> pd.DataFrame:
    """One row per method with the raw metric values"""
    return pd.DataFrame([{
        "method": s.method,
        "label": s.label,
        "abs_error_mean": s.abs_error_mean,
        "abs_error_sd": s.abs_error_sd,
        "ci_size_mean": s.ci_size_mean,
        "ci_size_sd": s.ci_size_sd,
        "coverage": s.coverage,
        "type2_error": s.type2_error,
        "completed": s.completed,
        "failed": s.failed,
    } for s in report.summaries])


def outcomes_frame(report) -> pd.DataFrame:
    return pd.DataFrame([{
        "replication": o.replication,
        "seed": o.seed,
        "method": o.method,
        "truth": o.truth,
        "estimate": o.estimate,
        "ci_low": o.ci_low,
        "ci_high": o.ci_high,
        "error": o.error or "",
    } for o in report.outcomes])


def format_table(report) -> str:
    """Aligned text table: Abs. error ± sd, Size CI ± sd, Coverage, Type II error"""
    rows = [TABLE_COLUMNS]
    for s in report.summaries:
        label = s.label if not s.failed else f"{s.label} ({s.failed} failed)"
        rows.append((label, _pm(s.abs_error_mean, s.abs_error_sd), _pm(s.ci_size_mean, s.ci_size_sd),
                     _rate(s.coverage), _rate(s.type2_error)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for k, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    bench = report.config
    header = (f"{bench.generator} n={report.n} d={report.d} replications={bench.replications} "
              f"target={bench.resolved_target} credible level={1 - bench.alpha:g}")
    return header + "\n" + "\n".join(lines) + "\n"


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_benchmark(report, out_dir: str) -> dict:
    """
    Write summary.csv, summary.txt, replications.csv and config.json

    Returns:
        dict: artifact name -> path
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "summary_csv": os.path.join(out_dir, "summary.csv"),
        "summary_txt": os.path.join(out_dir, "summary.txt"),
        "replications": os.path.join(out_dir, "replications.csv"),
        "config": os.path.join(out_dir, "config.json"),
    }
    summary_frame(report).to_csv(paths["summary_csv"], index=False, float_format=FLOAT_FORMAT)
    with open(paths["summary_txt"], "w", encoding="utf-8") as f:
        f.write(format_table(report))
    outcomes_frame(report).to_csv(paths["replications"], index=False, float_format=FLOAT_FORMAT)
    echoed = report.config.echo()
    echoed.update(n=report.n, d=report.d)
    _write_json(echoed, paths["config"])
    logger.info("Benchmark report written to %s", out_dir)
    return paths


def write_posterior(posterior, out_dir: str, details: dict = None) -> dict:
    """Export draws.csv, interval.csv and summary.json for an EffectPosterior"""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "draws": os.path.join(out_dir, "draws.csv"),
        "interval": os.path.join(out_dir, "interval.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    pd.DataFrame({"ate": posterior.draws}).to_csv(paths["draws"], index=False, float_format=FLOAT_FORMAT)
    pd.DataFrame([{"ci_low": posterior.ci_low, "ci_high": posterior.ci_high}]).to_csv(
        paths["interval"], index=False, float_format=FLOAT_FORMAT)

    fit_mean, fit_sd = posterior.gaussian_fit()
    summary = {
        "post_mean": posterior.post_mean,
        "ci_low": posterior.ci_low,
        "ci_high": posterior.ci_high,
        "alpha": posterior.alpha,
        "randomized": posterior.randomized,
        "draws": int(posterior.draws.size),
        "gaussian_fit": {"mean": fit_mean, "sd": fit_sd},
    }
    summary.update(details or {})
    _write_json(summary, paths["summary"])
    logger.info("Posterior written to %s", out_dir)
    return paths


def write_baseline(estimate, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "estimate.csv")
    pd.DataFrame([{
        "method": estimate.method,
        "estimate": estimate.estimate,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
    }]).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def plot_posterior(posterior, path: str, title: str = None, truth: float = None, bins: int = 50) -> str:
    """
    Histogram of the ATE draws with the posterior mean (solid), the credible
    interval (dotted), the best-fitting normal density and optionally the truth
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    try:
        ax.hist(posterior.draws, bins=bins, density=True, color="lightgray", edgecolor="gray")
        fit_mean, fit_sd = posterior.gaussian_fit()
        if fit_sd > 0:
            grid = np.linspace(posterior.draws.min(), posterior.draws.max(), 200)
            ax.plot(grid, norm.pdf(grid, fit_mean, fit_sd), color="orange", label="Gaussian fit")
        ax.axvline(posterior.post_mean, color="black", linestyle="-", label="Posterior mean")
        ax.axvline(posterior.ci_low, color="black", linestyle=":",
                   label=f"{100 * (1 - posterior.alpha):g}% CI")
        ax.axvline(posterior.ci_high, color="black", linestyle=":")
        if truth is not None:
            ax.axvline(truth, color="red", linestyle="-", label="True value")
        ax.set_xlabel("ATE")
        ax.set_ylabel("Density")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
    finally:
        plt.close(fig)
    logger.info("Posterior histogram saved to %s", path)
    return path
