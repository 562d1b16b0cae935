"""Figure rendering for simulation reports; files only, no interactive backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .simulate import ExperimentResult  # noqa: E402


def _grouped(result: ExperimentResult, prefix: str = "") -> dict[str, list[dict]]:
    arms: dict[str, list[dict]] = {}
    for row in result.steps:
        arm = str(row["arm"])
        if prefix and not arm.startswith(prefix):
            continue
        arms.setdefault(arm, []).append(row)
    return arms


def plot_p_best(result: ExperimentResult, out_path: Path) -> Path:
    """Selection probability of the best note over training steps, per arm."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for arm, rows in _grouped(result).items():
        if arm.startswith("k="):
            continue
        xs = [r["step"] for r in rows]
        ys = [r["p_best"] for r in rows]
        ax.plot(xs, ys, label=arm)
    ax.set_xlabel("step")
    ax.set_ylabel("p(best strategy)")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.set_title("Selection probability of the best strategy")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_reward(result: ExperimentResult, out_path: Path, window: int = 25) -> Path:
    """Smoothed realized reward per step for each arm."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for arm, rows in _grouped(result).items():
        if arm.startswith("k="):
            continue
        rewards = [float(r["reward"]) for r in rows]
        smooth = [
            sum(rewards[max(0, i - window + 1) : i + 1])
            / len(rewards[max(0, i - window + 1) : i + 1])
            for i in range(len(rewards))
        ]
        ax.plot([r["step"] for r in rows], smooth, label=arm)
    ax.set_xlabel("step")
    ax.set_ylabel(f"reward (window {window})")
    ax.legend()
    ax.set_title("Realized reward")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_ksweep(result: ExperimentResult, out_path: Path) -> Path:
    """Mean reward as a function of how many strategies are injected."""
    per_k = result.summary.get("per_k", {})
    ks = sorted(int(k) for k in per_k)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(k) for k in ks], [per_k[str(k)] for k in ks])
    ax.set_xlabel("k (strategies injected)")
    ax.set_ylabel("mean reward")
    ax.set_title("Guidance count sweep")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_report(result: ExperimentResult, out_dir: Path) -> list[Path]:
    """Write every figure that applies to this result; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    scenario = result.summary.get("scenario", "run")
    if any(not str(r["arm"]).startswith("k=") for r in result.steps):
        written.append(plot_p_best(result, out_dir / f"{scenario}_p_best.png"))
        written.append(plot_reward(result, out_dir / f"{scenario}_reward.png"))
    if result.summary.get("per_k"):
        written.append(plot_ksweep(result, out_dir / f"{scenario}_ksweep.png"))
    return written
