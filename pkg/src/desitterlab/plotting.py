"""PNG previews rendered off-screen next to the ``.dat`` files they show."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def line_plot(path: Path, x, series: Sequence, labels: Sequence[str], xlabel: str, ylabel: str,
              logy: bool = False, title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=100)
    for y, lab in zip(series, labels):
        y = np.asarray(y, dtype=float)
        ax.plot(x, np.abs(y) if logy else y, label=lab)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(labels) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def scatter_plot(path: Path, xs: Sequence, ys: Sequence, labels: Sequence[str], xlabel: str, ylabel: str,
                 title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 5.0), dpi=100)
    for x, y, lab in zip(xs, ys, labels):
        ax.plot(x, y, lw=0.8, label=lab)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def pole_plot(path: Path, analytic: Sequence[complex], numeric: Sequence[complex] = ()) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.0, 4.0), dpi=100)
    a = np.asarray(analytic, dtype=complex)
    ax.plot(a.real, a.imag, "o", mfc="none", label="lattice")
    if len(numeric):
        z = np.asarray(numeric, dtype=complex)
        ax.plot(z.real, z.imag, "x", label="shooting")
    ax.set_xlabel("Re sigma")
    ax.set_ylabel("Im sigma")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path
