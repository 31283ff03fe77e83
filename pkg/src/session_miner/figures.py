"""Report figures, rendered headlessly next to the delimited outputs.

Every renderer takes the already-computed table, writes a PNG and returns
the path.  Rendering is deterministic: the Agg backend, no timestamps,
and the Software metadata chunk suppressed, so reruns are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE = dict(dpi=110, metadata={"Software": None})

_BAND_COLORS = {
    "very_strong": "#1a6b32",
    "strong": "#3f9b55",
    "positive": "#95c99f",
    "weak": "#c9c9c9",
    "": "#c9c9c9",
}


def _empty(ax, message: str):
    ax.text(0.5, 0.5, message, ha="center", va="center", transform=ax.transAxes)
    ax.set_xticks([])
    ax.set_yticks([])


def render_reliability(reliability, path) -> Path:
    """Paired G / phi bars per measure."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ok = reliability.dropna(subset=["G"]) if len(reliability) else reliability
    if len(ok):
        x = np.arange(len(ok))
        ax.bar(x - 0.2, ok["G"], width=0.4, label="G", color="#2b6cb0")
        ax.bar(x + 0.2, ok["phi"], width=0.4, label="phi", color="#9fc4e8")
        ax.set_xticks(x)
        ax.set_xticklabels(ok["measure"], rotation=40, ha="right", fontsize=8)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("coefficient")
        ax.legend(frameon=False)
        ax.set_title("Reliability of monthly measures (students x months)")
    else:
        _empty(ax, "no estimable measures")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_validity(validity, path) -> Path:
    """BIC improvement over the baseline per candidate, colored by band."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    rows = validity[validity["model"] != "baseline"].dropna(subset=["delta_bic"]) if len(validity) else validity
    if len(rows):
        rows = rows.sort_values("delta_bic")
        colors = [_BAND_COLORS.get(b, "#c9c9c9") for b in rows["band"]]
        ax.barh(np.arange(len(rows)), rows["delta_bic"], color=colors)
        ax.set_yticks(np.arange(len(rows)))
        ax.set_yticklabels(rows["model"], fontsize=8)
        ax.axvline(0, color="black", lw=0.8)
        for cut in (2, 6, 10):
            ax.axvline(cut, color="gray", lw=0.6, ls=":")
        ax.set_xlabel("BIC improvement over baseline")
        ax.set_title("Incremental predictive validity")
    else:
        _empty(ax, "no validity results")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_sessions(sessions, path) -> Path:
    """Distributions of session size and length, split by kind."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    if len(sessions):
        kinds = sorted(sessions["kind"].unique())
        for kind in kinds:
            sub = sessions[sessions["kind"] == kind]
            axes[0].hist(sub["size"], bins=20, alpha=0.6, label=kind)
            axes[1].hist(sub["session_length_mins"], bins=20, alpha=0.6, label=kind)
        axes[0].set_xlabel("active students")
        axes[1].set_xlabel("session length (mins)")
        axes[0].set_ylabel("sessions")
        axes[0].legend(frameon=False, fontsize=8)
    else:
        _empty(axes[0], "no sessions")
        _empty(axes[1], "no sessions")
    fig.suptitle("Inferred sessions")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def render_sweep(sweep, path) -> Path:
    """Session count and length quartiles across gap thresholds."""
    path = Path(path)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    if len(sweep):
        axes[0].plot(sweep["threshold"], sweep["n"], marker="o", color="#2b6cb0")
        axes[0].set_xlabel("gap threshold (mins)")
        axes[0].set_ylabel("sessions")
        axes[1].plot(sweep["threshold"], sweep["median"], marker="o", label="median",
                     color="#2b6cb0")
        axes[1].fill_between(sweep["threshold"], sweep["q1"], sweep["q3"], alpha=0.3,
                             color="#2b6cb0", label="IQR")
        axes[1].plot(sweep["threshold"], sweep["max"], ls=":", color="gray", label="max")
        axes[1].set_xlabel("gap threshold (mins)")
        axes[1].set_ylabel("session length (mins)")
        axes[1].legend(frameon=False, fontsize=8)
    else:
        _empty(axes[0], "no data")
        _empty(axes[1], "no data")
    fig.suptitle("Gap-threshold sweep")
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path
