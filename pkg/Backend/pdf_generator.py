from io import BytesIO
from datetime import datetime
from typing import Any, Dict, Iterable, Mapping, Optional

from reportlab.lib.pagesizes import LETTER
from reportlab.lib.units import inch
from reportlab.pdfgen import canvas


def _format_probability(value: float) -> str:
    """Probability as a percentage; tiny values keep two significant digits."""
    pct = 100.0 * float(value)
    return f"{pct:.2f}%" if pct >= 0.01 else f"{pct:.2g}%"


def _table_header(c: canvas.Canvas, y: float, columns: Dict[str, float]) -> None:
    c.setFont("Helvetica-Bold", 9)
    c.drawString(columns["rank"], y, "Rank")
    c.drawString(columns["waveform"], y, "Waveform")
    c.drawString(columns["summary"], y, "Parameters")
    c.drawRightString(columns["probability"], y, "Probability")


def generate_recommendation_pdf(
    environment: Mapping[str, str],
    recommendations: Iterable[Dict[str, Any]],
    model_info: Optional[Mapping[str, str]] = None,
) -> bytes:
    """
    Generate a one-page recommendation sheet.

    Parameters
    ----------
    environment:
        Relation -> value pairs exactly as the query stated them.
    recommendations:
        Iterable of dicts with keys:
          rank, waveform_id, probability, and optionally summary
    model_info:
        Optional run details to print under the header
        (mode, seed, checkpoint ...).

    Returns
    -------
    bytes:
        Raw PDF bytes.
    """
    buffer = BytesIO()
    c = canvas.Canvas(buffer, pagesize=LETTER)

    width, height = LETTER
    left_margin = 0.9 * inch
    right_margin = 0.9 * inch
    top_margin = height - 0.9 * inch

    y = top_margin

    # Header
    c.setFont("Helvetica-Bold", 18)
    c.drawString(left_margin, y, "WavePilot Waveform Recommendation")
    y -= 24

    c.setFont("Helvetica", 10)
    generated_at = datetime.now().strftime("%Y-%m-%d %H:%M")
    c.drawString(left_margin, y, f"Generated: {generated_at}")
    y -= 16

    if model_info:
        c.setFont("Helvetica", 9)
        details = ", ".join(f"{k}: {v}" for k, v in model_info.items())
        c.drawString(left_margin, y, details[:120])
        y -= 16

    # Environment block
    c.setFont("Helvetica-Bold", 11)
    c.drawString(left_margin, y, "Environment")
    y -= 14

    c.setFont("Helvetica", 10)
    for relation, value in environment.items():
        c.drawString(left_margin, y, f"{relation.replace('_', ' ')}: {value}")
        y -= 12
    y -= 6

    # Ranking table
    c.setFont("Helvetica-Bold", 11)
    c.drawString(left_margin, y, "Ranked waveforms")
    y -= 16

    columns = {
        "rank": left_margin,
        "waveform": left_margin + 40,
        "summary": left_margin + 110,
        "probability": width - right_margin,
    }
    _table_header(c, y, columns)
    y -= 10

    c.setLineWidth(0.5)
    c.line(left_margin, y, width - right_margin, y)
    y -= 8

    c.setFont("Helvetica", 9)

    for rec in recommendations:
        if y < 80:
            c.showPage()
            y = height - 0.9 * inch
            _table_header(c, y, columns)
            y -= 10
            c.line(left_margin, y, width - right_margin, y)
            y -= 8
            c.setFont("Helvetica", 9)

        c.drawString(columns["rank"], y, str(rec.get("rank", "")))
        c.drawString(columns["waveform"], y, str(rec.get("waveform_id", "")))
        c.drawString(columns["summary"], y, str(rec.get("summary", ""))[:70])
        try:
            probability = _format_probability(float(rec.get("probability", 0.0)))
        except (TypeError, ValueError):
            probability = "-"
        c.drawRightString(columns["probability"], y, probability)
        y -= 12

    # Footer
    c.setFont("Helvetica-Oblique", 8)
    c.drawString(
        left_margin,
        0.75 * inch,
        "Probabilities are softmax scores over the known waveforms, not link-level guarantees.",
    )

    c.showPage()
    c.save()

    pdf_bytes = buffer.getvalue()
    buffer.close()
    return pdf_bytes
