"""PNG figures for the report path (non-interactive backend)."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical bytes
_META = {"Software": None}


def _render(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    return buf.getvalue()


def cesaro(data: dict) -> bytes:
    fig, ax = plt.subplots(figsize=(6, 4))
    T, C, se = data["T"], data["C"], data["se"]
    ax.loglog(T, C, lw=1.5, label=data.get("label", ""))
    ax.fill_between(T, np.maximum(C - 2 * se, C * 1e-3), C + 2 * se, alpha=0.3)
    ax.set_xlabel("T")
    ax.set_ylabel("mean Cesaro second moment")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _render(fig)


def exponents(data: dict) -> bytes:
    fig, ax = plt.subplots(figsize=(6, 4))
    T, C = data["T"], data["C"]
    ax.loglog(T, C, ".", ms=3, color="0.4")
    for (lo, hi), s in zip(data["windows"], data["slopes"]):
        mask = (T >= lo) & (T <= hi)
        if mask.any():
            ax.loglog(T[mask], C[mask], lw=1.2, label=f"[{lo:.3g}, {hi:.3g}]: {s:.3f}")
    ax.set_xlabel("T")
    ax.set_ylabel("mean Cesaro second moment")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    return _render(fig)


def msa(data: dict) -> bytes:
    fig, ax = plt.subplots(figsize=(5, 4))
    L, f = data["L"], data["failure"]
    lo, hi = 1 - data["ci_high"], 1 - data["ci_low"]
    ax.errorbar(L, f, yerr=[f - lo, hi - f], fmt="o-", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("L")
    ax.set_ylabel("failure rate of regularity")
    fig.tight_layout()
    return _render(fig)


def wegner(data: dict) -> bytes:
    fig, ax = plt.subplots(figsize=(5, 4))
    eta, est, se = data["eta"], data["estimate"], data["se"]
    n1, n2 = data["sizes"]
    ax.errorbar(eta, est, yerr=se, fmt="o", capsize=3, label="estimate")
    ax.loglog(eta, est[0] * (eta / eta[0]) ** 2, "--", label="eta^2 reference")
    ax.set_xlabel("eta")
    ax.set_ylabel(f"E[Tr E1 Tr E2], |L1|={n1}, |L2|={n2}")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return _render(fig)


PLOTS = {"cesaro": cesaro, "exponents": exponents, "msa": msa, "wegner": wegner}
