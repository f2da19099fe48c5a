"""Figures for frequency traces (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from oulab.frequency import FrequencyTrace  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_PNG_META = {"Software": None}


def plot_trace(trace: FrequencyTrace, path: str | Path, title: str | None = None) -> Path:
    """Two panels: H and I on log axes, and N with N' against τ."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, (ax_h, ax_n) = plt.subplots(1, 2, figsize=(9.0, 3.6), constrained_layout=True)
    tau = trace.tau
    ax_h.loglog(tau, np.abs(trace.H), label="H")
    if np.isfinite(trace.I).any() and np.any(trace.I != 0):
        ax_h.loglog(tau, np.abs(trace.I), label="|I|")
    ax_h.set_xlabel("τ")
    ax_h.legend()
    if np.isfinite(trace.N).any():
        ax_n.semilogx(tau, trace.N, marker=".", label="N")
        ax_d = ax_n.twinx()
        ax_d.semilogx(tau, trace.N_prime, color="tab:red", lw=0.8, label="N'")
        ax_d.set_ylabel("N'", color="tab:red")
    ax_n.set_xlabel("τ")
    ax_n.set_ylabel("N")
    if title:
        fig.suptitle(title)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path
