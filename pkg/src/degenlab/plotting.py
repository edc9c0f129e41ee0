"""Render the plot-data tables of a run directory to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import read_csv  # noqa: E402


def read_table(path) -> dict:
    """Columns of a CSV written by the runner (comment lines skipped), as arrays or string lists."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    out = {}
    for k, name in enumerate(header):
        col = [r[k] for r in rows]
        try:
            out[name] = np.array([float(c) for c in col])
        except ValueError:
            out[name] = col
    return out


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_energy(run_dir: Path, out: Path):
    t = read_table(run_dir / "energy_vs_eps.csv")
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.semilogx(t["eps"], t["grad_p_integral"], "o-", label=r"$\int|\nabla u_\varepsilon|^p$")
    ax.semilogx(t["eps"], t["final_energy"], "s--", label="discrete energy")
    ax.invert_xaxis()
    ax.set_xlabel(r"$\varepsilon$")
    ax.legend()
    return _save(fig, out / "energy_vs_eps.png")


def plot_distances(run_dir: Path, out: Path):
    t = read_table(run_dir / "lp_distances.csv")
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.semilogx(t["eps_to"], t["lp_distance"], "o-")
    if np.any(t["lp_distance"] > 0):
        ax.set_yscale("log")
    ax.invert_xaxis()
    ax.set_xlabel(r"$\varepsilon_{k+1}$")
    ax.set_ylabel(r"$\|u_{\varepsilon_k}-u_{\varepsilon_{k+1}}\|_{L^p}$")
    return _save(fig, out / "lp_distances.png")


def plot_ladder(run_dir: Path, out: Path):
    t = read_table(run_dir / "ladder.csv")
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.4))
    a1.plot(t["k"], t["norm_low"], "o-", label="low (smaller ball)")
    a1.plot(t["k"], t["norm_high"], "s--", label="high (larger ball)")
    a1.set_xlabel("level k")
    a1.set_ylabel("norm of W")
    a1.legend()
    a2.semilogy(t["k"], t["fitted_C"], "o-")
    a2.set_xlabel("level k")
    a2.set_ylabel("fitted constant")
    return _save(fig, out / "ladder.png")


def plot_constants(run_dir: Path, out: Path):
    t = read_table(run_dir / "implied_constants.csv")
    checks = sorted(set(t["check"]))
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for c in checks:
        idx = [k for k, name in enumerate(t["check"]) if name == c]
        x = t["value"][idx]
        y = t["ratio"][idx]
        ax.plot(np.arange(len(idx)) if np.ptp(x) == 0 else x, y, "o-", label=c)
    ax.set_yscale("log")
    ax.set_xlabel("swept parameter")
    ax.set_ylabel("lhs / rhs")
    ax.legend(fontsize=7)
    return _save(fig, out / "implied_constants.png")


def plot_troisi(run_dir: Path, out: Path):
    t = read_table(run_dir / "troisi.csv")
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for q in sorted(set(t["q"])):
        ax.hist(t["ratio"][t["q"] == q], bins=30, alpha=0.6, label=f"q = {q:g}")
    ax.set_xlabel("lhs / rhs")
    ax.set_ylabel("count")
    ax.legend()
    return _save(fig, out / "troisi.png")


def plot_convergence(run_dir: Path, out: Path):
    t = read_table(run_dir / "convergence.csv")
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.loglog(t["h"], t["l2_error"], "o-", label="measured")
    ax.loglog(t["h"], t["l2_error"][0] * (t["h"] / t["h"][0]) ** 2, ":", label=r"$O(h^2)$")
    ax.set_xlabel("h")
    ax.set_ylabel(r"$L^2$ error")
    ax.legend()
    return _save(fig, out / "convergence.png")


def plot_solution(path: Path, out: Path):
    u = read_csv(path)
    if u.grid.dim != 2:
        return None
    fig, ax = plt.subplots(figsize=(4.6, 4))
    x, y = u.grid.axes
    im = ax.pcolormesh(x, y, u.values.T, shading="auto")
    fig.colorbar(im, ax=ax)
    ax.set_aspect("equal")
    ax.set_title(path.stem)
    return _save(fig, out / f"{path.stem}.png")


_TABLES = {
    "energy_vs_eps.csv": plot_energy,
    "lp_distances.csv": plot_distances,
    "ladder.csv": plot_ladder,
    "implied_constants.csv": plot_constants,
    "troisi.csv": plot_troisi,
    "convergence.csv": plot_convergence,
}


def render_run(run_dir) -> list[Path]:
    """Render every known table in ``run_dir`` into ``run_dir/figures``; returns the files written."""
    run_dir = Path(run_dir)
    out = run_dir / "figures"
    out.mkdir(exist_ok=True)
    written = []
    for name, fn in _TABLES.items():
        if (run_dir / name).is_file():
            written.append(fn(run_dir, out))
    sols = sorted(p for p in run_dir.glob("solution*.csv") if p.stem != "solution_direct")
    if sols:
        p = plot_solution(sols[-1], out)
        if p is not None:
            written.append(p)
    return written
