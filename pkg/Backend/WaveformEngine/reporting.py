# Backend/WaveformEngine/reporting.py

"""Text reports and key=value metrics files for training runs."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from .cf_train import EvalReport
from .errors import IoFailure
from .numerics import read_manifest, write_manifest
from .recommend import Recommendation

METRICS_FILE = "metrics.txt"
REPORT_FILE = "report.txt"


def write_metrics(report: EvalReport, path: Union[str, Path]) -> Path:
    """One metric per line, e.g. `hit@1=0.9612`."""
    return write_manifest(path, report.metrics())


def read_metrics(path: Union[str, Path]) -> Dict[str, str]:
    return read_manifest(path)


def _curve_rows(report: EvalReport, every: int) -> List[str]:
    rows = []
    for epoch, (l1, l2) in enumerate(zip(report.l1_curve, report.l2_curve)):
        last = epoch == len(report.l1_curve) - 1
        if epoch % every and not last:
            continue
        hit = f"{report.hit_curve[epoch]:.4f}" if epoch < len(report.hit_curve) else "-"
        rows.append(f"  {epoch:>6d}  {l1:>10.5f}  {l2:>10.5f}  {hit:>8}")
    return rows


def format_report(report: EvalReport, title: str = "WavePilot training report", every: int = 10) -> str:
    lines = ["=" * 72, title, "=" * 72, ""]

    lines.append("Configuration")
    for key, value in report.config.items():
        lines.append(f"  {key:<26} {value}")
    lines.append("")

    lines.append("Results")
    lines.append(f"  {'test environments':<26} {report.n_test}")
    for k in sorted(report.hit_at_k) or [1]:
        value = report.hit_at_k.get(k, report.hit_at_1)
        lines.append(f"  {'hit@' + str(k):<26} {value:.4f}")
    if report.trailing_hit_at_1 is not None:
        lines.append(f"  {'hit@1 (trailing average)':<26} {report.trailing_hit_at_1:.4f}")
        lines.append(f"  {'converged at epoch':<26} {report.converged_epoch}")
    lines.append("")

    if report.l1_curve:
        lines.append("Curves")
        lines.append(f"  {'epoch':>6}  {'L1':>10}  {'L2':>10}  {'hit@1':>8}")
        lines.extend(_curve_rows(report, max(every, 1)))
        lines.append("")
    return "\n".join(lines)


def write_report(report: EvalReport, path: Union[str, Path], title: Optional[str] = None) -> Path:
    path = Path(path)
    text = format_report(report, title or "WavePilot training report")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(message=f"Cannot write report '{path}': {exc}", subject=str(path)) from exc
    return path


def format_recommendations(recs: Sequence[Recommendation]) -> str:
    lines = [f"{'rank':>4}  {'waveform':<10}  {'probability':>11}  {'score':>10}"]
    lines.extend(f"{r.rank:>4d}  {r.waveform_id:<10}  {r.probability:>11.6f}  {r.score:>10.4f}" for r in recs)
    return "\n".join(lines)


def format_table(title: str, rows: Iterable[Sequence[str]], header: Sequence[str]) -> str:
    rows = [list(map(str, row)) for row in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    lines = [title, "-" * len(title)]
    lines.append("  ".join(str(h).ljust(w) for h, w in zip(header, widths)))
    lines.extend("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in rows)
    return "\n".join(lines)
