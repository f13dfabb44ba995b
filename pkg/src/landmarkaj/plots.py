"""Matplotlib figure rendering for curves and experiment reports (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .core import StateSpace
from .evaluate import ESTIMATORS, ExperimentReport
from .inference import ConfidenceBand
from .stepfun import StepFunction

COLORS = {"aj": "tab:blue", "lmaj": "tab:orange", "haj": "tab:green"}


def save_curve_figure(curve: StepFunction, space: StateSpace, path, title: str = "",
                      band: ConfidenceBand | None = None) -> None:
    """Step plot of the probability of each state over time, optional band."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    times = curve.jump_times
    for k in range(space.n_states):
        label = space.label(k + 1)
        ax.step(times, curve.values[:, k], where="post", label=f"state {label}")
        if band is not None:
            ax.fill_between(times, band.lower.values[:, k], band.upper.values[:, k],
                            step="post", alpha=0.2)
    ax.set_xlabel("time")
    ax.set_ylabel("transition probability")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize="small")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_mrse_figures(report: ExperimentReport, space: StateSpace, directory) -> list:
    """One MRSE-versus-landmark figure per frailty level and target state."""
    paths = []
    landmark = report.config.landmark_state
    targets = [k for k in range(1, space.n_states + 1) if k != landmark]
    for lv in report.levels:
        fig, axes = plt.subplots(1, len(targets), figsize=(4.5 * len(targets), 3.6),
                                 squeeze=False)
        for ax, k in zip(axes[0], targets):
            for kind in ESTIMATORS:
                rows = sorted((r.landmark, r.mean, r.mc_se) for r in lv.mrse
                              if r.estimator == kind and r.target_state == k)
                if not rows:
                    continue
                xs, means, ses = zip(*rows)
                ax.errorbar(xs, means, yerr=ses, marker="o", capsize=2,
                            color=COLORS[kind], label=kind.upper())
            ax.set_xlabel("landmark time")
            ax.set_ylabel("mean MRSE")
            ax.set_title(f"{space.label(landmark)} to {space.label(k)} ({lv.label})")
            ax.grid(alpha=0.3)
            ax.legend(fontsize="small")
        fig.tight_layout()
        out = f"{directory}/mrse_{_slug(lv.label)}.png"
        fig.savefig(out, dpi=150)
        plt.close(fig)
        paths.append(out)
    return paths


def save_bias_variance_figures(report: ExperimentReport, space: StateSpace,
                               directory) -> list:
    """Bias and variance curves at the bias landmark, per frailty level."""
    paths = []
    landmark = report.config.landmark_state
    targets = [k for k in range(1, space.n_states + 1) if k != landmark]
    for lv in report.levels:
        if not lv.bias:
            continue
        fig, axes = plt.subplots(2, len(targets), figsize=(4.5 * len(targets), 6.4),
                                 squeeze=False)
        for col, k in enumerate(targets):
            for kind in ESTIMATORS:
                if kind not in lv.bias:
                    continue
                axes[0][col].plot(lv.oracle_times, lv.bias[kind][:, k - 1],
                                  color=COLORS[kind], label=kind.upper())
                axes[1][col].plot(lv.oracle_times, lv.variance[kind][:, k - 1],
                                  color=COLORS[kind], label=kind.upper())
            axes[0][col].axhline(0.0, color="gray", lw=0.8)
            axes[0][col].set_title(f"bias, {space.label(landmark)} to {space.label(k)}")
            axes[1][col].set_title(f"variance, {space.label(landmark)} to {space.label(k)}")
            for row in (0, 1):
                axes[row][col].set_xlabel("time")
                axes[row][col].grid(alpha=0.3)
                axes[row][col].legend(fontsize="small")
        fig.suptitle(f"landmark s={report.config.bias_landmark:g} ({lv.label})")
        fig.tight_layout()
        out = f"{directory}/bias_variance_{_slug(lv.label)}.png"
        fig.savefig(out, dpi=150)
        plt.close(fig)
        paths.append(out)
    return paths


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label)
