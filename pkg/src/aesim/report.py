"""Report rendering: delimited outputs plus matplotlib figures.

Single runs produce trace.csv / curve.csv with trace and learning-curve
figures; batch studies produce a directory per config with averaged curves,
per-rep outcomes, per-rep traces, a JSON summary, and figures. Column names
and order of the CSV files are part of the external contract.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from aesim.engine import ExperimentState, StudyReport, is_stagnant

CURVE_COLUMNS = ("step", "mean_sigma", "sigma_of_sigma", "mae")
OUTCOME_COLUMNS = ("rep", "branch", "stagnant_at_bifurcation", "released", "steps")
TRACE_COLUMNS = ("step", "index", "row", "col", "z1", "z2", "value", "source")

SOURCE_COLORS = {"seed": "tab:blue", "bo": "tab:red", "intervention": "tab:green"}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def trace_rows(trace) -> list:
    rows = []
    for r in trace:
        rec = r if isinstance(r, dict) else r.__dict__
        rows.append(
            (
                rec["step"],
                rec["index"],
                rec["location"][0],
                rec["location"][1],
                rec["latent"][0],
                rec["latent"][1],
                rec["value"],
                rec["source"],
            )
        )
    return rows


def curve_rows(curve) -> list:
    return [(e.step, e.mean_sigma, e.sigma_of_sigma, e.mae) for e in curve]


# ---------------------------------------------------------------------------
# figures


def plot_learning_curve(ax, steps, mean_sigma, mae=None, quantiles=None, label=None):
    if quantiles is not None:
        ax.fill_between(steps, quantiles[0], quantiles[-1], alpha=0.2, color="tab:orange")
        ax.fill_between(steps, quantiles[1], quantiles[-2], alpha=0.3, color="tab:orange")
    ax.plot(steps, mean_sigma, color="tab:orange", label=label or "mean sigma")
    ax.set_xlabel("step")
    ax.set_ylabel("predictive sigma")
    if mae is not None:
        ax2 = ax.twinx()
        ax2.plot(steps, mae, color="tab:purple", ls="--", label="MAE")
        ax2.set_ylabel("MAE")


def save_run_figures(state: ExperimentState, outdir: Path) -> None:
    steps = [e.step for e in state.curve]
    quantile_levels = (5, 25, 75, 95)
    q = np.array(
        [[np.percentile(e.sigma_vector, p) for e in state.curve] for p in quantile_levels]
    )
    fig, ax = plt.subplots(figsize=(6, 4))
    plot_learning_curve(
        ax, steps, [e.mean_sigma for e in state.curve], mae=[e.mae for e in state.curve], quantiles=q
    )
    fig.tight_layout()
    fig.savefig(outdir / "curve.png", dpi=150)
    plt.close(fig)

    fig, (ax_real, ax_latent) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax_real.imshow(state.dataset.image.values, cmap="gray", origin="upper")
    for source, color in SOURCE_COLORS.items():
        pts = [r.location for r in state.trace if r.source == source]
        if pts:
            pts = np.array(pts)
            ax_real.scatter(pts[:, 1], pts[:, 0], s=18, c=color, label=source, edgecolors="w", lw=0.4)
    ax_real.set_title("real space")
    ax_real.legend(loc="upper right", fontsize=7)

    ax_latent.scatter(
        state.embedding.coords[:, 0], state.embedding.coords[:, 1], s=3, c="0.8", label="patches"
    )
    for source, color in SOURCE_COLORS.items():
        pts = [r.latent for r in state.trace if r.source == source]
        if pts:
            pts = np.array(pts)
            ax_latent.scatter(pts[:, 0], pts[:, 1], s=18, c=color, label=source)
    ax_latent.set_xlabel("z1")
    ax_latent.set_ylabel("z2")
    ax_latent.set_title("latent space")
    ax_latent.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    fig.savefig(outdir / "trace.png", dpi=150)
    plt.close(fig)


def write_run_report(state: ExperimentState, outdir) -> None:
    """Trace + curve CSVs, summary JSON, and figures for a single experiment."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(outdir / "trace.csv", TRACE_COLUMNS, trace_rows(state.trace))
    write_csv(outdir / "curve.csv", CURVE_COLUMNS, curve_rows(state.curve))
    summary = {
        "config": state.config.to_dict(),
        "status": state.status,
        "measurements": len(state.trace),
        "stagnant": is_stagnant(state),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_run_figures(state, outdir)


def _averaged_curves(branches):
    ok = [b for b in branches if b.branch != "error" and b.mean_sigma.size]
    if not ok:
        return None
    n = min(b.mean_sigma.size for b in ok)
    ms = np.stack([b.mean_sigma[:n] for b in ok])
    ss = np.stack([b.sigma_of_sigma[:n] for b in ok])
    mae = np.stack([b.mae[:n] for b in ok])
    return {
        "steps": np.arange(n),
        "mean_sigma": ms.mean(axis=0),
        "sigma_of_sigma": ss.mean(axis=0),
        "mae": mae.mean(axis=0),
        "var_mean_sigma": ms.var(axis=0),
        "var_mae": mae.var(axis=0),
    }


def write_study_report(report: StudyReport, outdir) -> None:
    """StudyReport directory: per-config CSVs + traces + figures, JSON summary."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {
        "master_seed": report.master_seed,
        "reps": report.reps,
        "bifurcate_at": report.bifurcate_at,
        "intervention": report.intervention,
        "configs": {},
    }
    for cfg_report in report.configs:
        cdir = outdir / cfg_report.label
        (cdir / "traces").mkdir(parents=True, exist_ok=True)
        rows = [
            (b.rep, b.branch, b.stagnant_at_bifurcation, b.released, b.steps)
            for b in cfg_report.branches
        ]
        write_csv(cdir / "outcomes.csv", OUTCOME_COLUMNS, rows)

        fig, ax = plt.subplots(figsize=(6, 4))
        for branch in sorted({b.branch for b in cfg_report.branches if b.branch != "error"}):
            sel = [b for b in cfg_report.branches if b.branch == branch]
            avg = _averaged_curves(sel)
            if avg is None:
                continue
            write_csv(
                cdir / f"curves_{branch}.csv",
                CURVE_COLUMNS,
                list(zip(avg["steps"], avg["mean_sigma"], avg["sigma_of_sigma"], avg["mae"])),
            )
            write_csv(
                cdir / f"curves_spread_{branch}.csv",
                ("step", "var_mean_sigma", "var_mae"),
                list(zip(avg["steps"], avg["var_mean_sigma"], avg["var_mae"])),
            )
            ax.plot(avg["steps"], avg["mean_sigma"], label=f"{branch} mean sigma")
            ax.fill_between(
                avg["steps"],
                avg["mean_sigma"] - np.sqrt(avg["var_mean_sigma"]),
                avg["mean_sigma"] + np.sqrt(avg["var_mean_sigma"]),
                alpha=0.25,
            )
        ax.set_xlabel("step")
        ax.set_ylabel("mean predictive sigma")
        ax.set_title(cfg_report.label)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(cdir / "learning_curves.png", dpi=150)
        plt.close(fig)

        for b in cfg_report.branches:
            if b.branch == "error":
                (cdir / "traces" / f"rep{b.rep:03d}_error.json").write_text(
                    json.dumps(b.trace, indent=2) + "\n"
                )
                continue
            write_csv(
                cdir / "traces" / f"rep{b.rep:03d}_{b.branch}.csv",
                TRACE_COLUMNS,
                trace_rows(b.trace),
            )

        summary["configs"][cfg_report.label] = {
            "config": cfg_report.config.to_dict(),
            "stagnation_rate": cfg_report.stagnation_rate(),
            "release_rate_intervention": cfg_report.release_rate("intervention"),
            "release_rate_control": cfg_report.release_rate("control"),
            "n_branches": len(cfg_report.branches),
            "errors": sum(1 for b in cfg_report.branches if b.branch == "error"),
        }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
