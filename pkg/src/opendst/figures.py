"""Report figures.

Rendered headlessly with the Agg backend so runs work without a display.
PNG metadata is stripped of timestamps to keep reruns byte-stable.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .evaluator import EvalReport  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Date": None}, "bbox_inches": "tight"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def turn_position_figure(report: EvalReport, path: Path) -> Path | None:
    series = report.turn_position_accuracy
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(series) + 1), series, marker="o", color="#1f6f8b")
    ax.set_xlabel("turn position")
    ax.set_ylabel("state match rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Tracking accuracy by turn position")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def domain_profile_figure(report: EvalReport, path: Path) -> Path | None:
    profile = report.domain_change_profile
    if not profile:
        return None
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(profile) + 1), profile, marker="s", color="#764462")
    ax.set_xlabel("turn position")
    ax.set_ylabel("mean new domains")
    ax.set_title("Domains introduced over the dialogue")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def per_domain_figure(report: EvalReport, path: Path) -> Path | None:
    scores = report.per_domain_jga
    if not scores:
        return None
    labels = sorted(scores)
    values = [scores[k] for k in labels]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(labels)), 3.5))
    ax.bar(labels, values, color="#2a9d8f")
    ax.set_ylabel("joint accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title("Per-domain joint accuracy")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def budget_figure(report: EvalReport, path: Path) -> Path | None:
    rows = report.extras.get("budget") if report.extras else None
    if not rows:
        return None
    labels = [r["strategy"] for r in rows]
    values = [max(r["requests_per_dialogue"], 1e-3) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(labels)), 3.5))
    ax.bar(labels, values, color="#e07a5f")
    ax.set_yscale("log")
    ax.set_ylabel("requests per dialogue (log)")
    ax.set_title("Request budget by strategy")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def render_report_figures(report: EvalReport, out_dir: Path) -> dict[str, Path]:
    """All applicable figures; skips those without data."""
    out_dir = Path(out_dir)
    produced: dict[str, Path] = {}
    jobs = (
        ("turn_position", turn_position_figure),
        ("domain_profile", domain_profile_figure),
        ("per_domain_jga", per_domain_figure),
        ("budget", budget_figure),
    )
    for name, fn in jobs:
        path = fn(report, out_dir / f"{name}.png")
        if path is not None:
            produced[name] = path
    return produced
