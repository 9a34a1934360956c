"""Figures rendered next to the CSV/JSON outputs (``--plot``).

matplotlib is imported lazily with the Agg backend so the numerical core
never depends on it.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path) -> None:
    from ._io import atomic_write_bytes

    buf = io.BytesIO()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(buf, format="png", dpi=120, metadata={"Software": None})
    atomic_write_bytes(Path(path), buf.getvalue())
    fig.clf()
    _pyplot().close(fig)


def plot_waveform(path, waveform, metrics=None) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    t = waveform.tau_grid * 1e9
    y = waveform.intensity / waveform.intensity.max()
    keep = (t > -50) & (t < 600)
    ax.plot(t[keep], y[keep], color="tab:blue")
    if metrics is not None:
        ax.set_title(f"tau_b = {metrics.tau_b * 1e9:.1f} ns, 1/e = {metrics.one_over_e_time * 1e9:.1f} ns")
    ax.set_xlabel("tau (ns)")
    ax.set_ylabel("|psi|^2 (normalized)")
    _save(fig, path)


def plot_jsa(path, jsa) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    f = jsa.grid / (2 * np.pi) / 1e6
    p = np.abs(jsa.values) ** 2
    p = p / p.max()
    keep = p > 1e-4
    ax.plot(f[keep], p[keep], color="tab:purple")
    ax.set_xlabel("anti-Stokes detuning (MHz)")
    ax.set_ylabel("|JSA|^2 (normalized)")
    _save(fig, path)


def plot_histogram(path, hist, g2) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    t = (hist.tau + hist.bin_width / 2) * 1e9
    ax.step(t, g2.g2, where="mid", color="tab:blue", lw=0.8)
    ax.axhline(1.0, color="0.5", lw=0.6)
    ax.set_xlabel("tau (ns)")
    ax.set_ylabel("g2_s,as(tau)")
    ax.set_title(f"g2_max = {g2.g2_max:.2f} +/- {g2.g2_max_stderr:.2f}")
    _save(fig, path)


def plot_g2c(path, g2c) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(g2c.window_widths * 1e9, g2c.g2c, yerr=g2c.stderr, fmt="o", color="tab:red")
    ax.axhline(0.5, color="0.5", ls="--", lw=0.6)
    ax.axhline(1.0, color="0.5", lw=0.6)
    ax.set_xscale("log")
    ax.set_xlabel("coincidence window (ns)")
    ax.set_ylabel("g2_c")
    _save(fig, path)


def plot_sweep(path, rows, parameter: str) -> None:
    plt = _pyplot()
    x = np.array([r[parameter] for r in rows]) * 1e3
    order = np.argsort(x)
    cols = [c for c in rows[0] if c != parameter and rows[0][c] is not None]
    fig, axes = plt.subplots(len(cols), 1, figsize=(6, 2.2 * len(cols)), sharex=True, squeeze=False)
    for ax, c in zip(axes[:, 0], cols):
        y = np.array([np.nan if r[c] is None else r[c] for r in rows], dtype=float)
        ax.plot(x[order], y[order], "o-")
        ax.set_ylabel(c)
    axes[-1, 0].set_xlabel(f"{parameter} (mW)")
    _save(fig, path)
