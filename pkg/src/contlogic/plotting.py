"""Figures for experiment reports, written next to the JSON and CSV."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def convergence_figure(report: dict, path: str) -> str:
    rows = report["rows"]
    ns = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(ns, [r["closeness_freq"] for r in rows], "o-", label="closeness frequency")
    ax.plot(ns, [r["membership_freq"] for r in rows], "s-", label="membership frequency")
    alpha = report["alpha"]["alpha"]
    err = report["alpha"]["half_width"]
    ax.axhline(alpha, color="k", lw=0.8, ls="--", label=f"limit α = {alpha:.3g}")
    if err > 0:
        ax.axhspan(max(alpha - err, 0), min(alpha + err, 1), color="k", alpha=0.08)
    ax.set_xscale("log")
    ax.set_ylim(-0.03, 1.03)
    ax.set_xlabel("domain size n")
    ax.set_ylabel("frequency")
    ax.set_title(report["formula"], fontsize=9)
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def concentration_figure(report: dict, path: str) -> str:
    rows = report["rows"]
    ns = [r["n"] for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(ns, [r["pass_freq"] for r in rows], "o-", label="pass frequency")
    ax.plot(ns, [r["worst_deviation"] for r in rows], "s-", label="worst deviation")
    ax.axhline(report["config"]["delta"], color="k", lw=0.8, ls="--", label="δ")
    if len(ns) > 1:
        ax.set_xscale("log")
    ax.set_xlabel("domain size n")
    ax.set_title(f"bin proportions of {report['inner']}", fontsize=9)
    ax.legend(fontsize=8, loc="best")
    fig.tight_layout()
    return _save(fig, path)


def profile_figure(alphas, path: str, title: str = "") -> str:
    M = len(alphas)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar([(i + 0.5) / M for i in range(M)], alphas, width=1.0 / M, edgecolor="k")
    ax.set_xlim(0, 1)
    ax.set_xlabel("value bin")
    ax.set_ylabel("probability")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def tabulated_figure(table, path: str, title: str = "D") -> str:
    """Plot a one- or two-argument tabulated function."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    if table.arity == 1:
        ax.plot(table.grids[0], table.values, "o-")
        ax.set_xlabel("r")
        ax.set_ylabel(title)
    elif table.arity == 2:
        im = ax.imshow(table.values.T, origin="lower", extent=(0, 1, 0, 1), vmin=0, vmax=1)
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("r1")
        ax.set_ylabel("r2")
    else:
        plt.close(fig)
        raise ValueError("only arity 1 and 2 tables can be drawn")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
