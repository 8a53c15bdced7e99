"""Dependency-free SVG fan charts of quantile forecasts.

One polyline per quantile (light to dark blue from q10 to q90, with the
median emphasized) plus an optional dashed truth overlay.  Output bytes are
deterministic for a given input, so charts are diffable in tests.
"""

from __future__ import annotations

import numpy as np

from .evaluate import load_forecast_csv
from .model import QuantileForecast

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 20, 28, 44

QUANTILE_LABELS = ["q10", "q20", "q30", "q40", "q50", "q60", "q70", "q80", "q90"]


def _color(i: int) -> str:
    # light to dark blue across the quantile axis
    shade = 210 - 20 * i
    return f"rgb({shade - 130},{shade - 60},{min(shade + 40, 255)})"


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_fan_chart(forecast: QuantileForecast,
                     truth: np.ndarray | None = None) -> str:
    """Build the SVG document for one county's forecast."""
    values = np.asarray(forecast.values, dtype=float)
    horizon, n_q = values.shape
    if n_q != 9:
        raise ValueError(f"expected 9 quantile columns, got {n_q}")
    ymax = float(values.max())
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        ymax = max(ymax, float(truth.max()))
    ymax = ymax * 1.05 if ymax > 0 else 1.0
    plot_w = WIDTH - MARGIN_L - MARGIN_R
    plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def x(d: float) -> float:
        return MARGIN_L + (d / max(horizon - 1, 1)) * plot_w

    def y(v: float) -> float:
        return MARGIN_T + (1.0 - v / ymax) * plot_h

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{MARGIN_L}" y="18" font-family="sans-serif" font-size="14">'
        f'county {forecast.county_id} from {forecast.onset_date} '
        f'(daily deaths, quantiles 0.1-0.9)</text>',
    ]
    axis_y = MARGIN_T + plot_h
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{axis_y}" x2="{MARGIN_L + plot_w}" '
        f'y2="{axis_y}" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
        f'y2="{axis_y}" stroke="black" stroke-width="1"/>'
    )
    for d in range(horizon):
        parts.append(
            f'<text x="{_fmt(x(d))}" y="{axis_y + 16}" font-family="sans-serif" '
            f'font-size="10" text-anchor="middle">{d + 1}</text>'
        )
    for k in range(5):
        v = ymax * k / 4.0
        parts.append(
            f'<text x="{MARGIN_L - 6}" y="{_fmt(y(v) + 3)}" '
            f'font-family="sans-serif" font-size="10" '
            f'text-anchor="end">{_fmt(v)}</text>'
        )
    for i, label in enumerate(QUANTILE_LABELS):
        points = " ".join(
            f"{_fmt(x(d))},{_fmt(y(values[d, i]))}" for d in range(horizon)
        )
        width = 2.5 if label == "q50" else 1.2
        parts.append(
            f'<polyline class="{label}" points="{points}" fill="none" '
            f'stroke="{_color(i)}" stroke-width="{width}"/>'
        )
    if truth is not None:
        points = " ".join(
            f"{_fmt(x(d))},{_fmt(y(truth[d]))}" for d in range(len(truth))
        )
        parts.append(
            f'<polyline class="truth" points="{points}" fill="none" '
            f'stroke="black" stroke-width="1.5" stroke-dasharray="5,3"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_fan_chart(forecast_csv: str, county: str, out_path: str,
                   truth: np.ndarray | None = None) -> None:
    """Render the fan chart of one county from a forecast CSV."""
    forecasts = {fc.county_id: fc for fc in load_forecast_csv(forecast_csv)}
    if county not in forecasts:
        candidates = sorted(forecasts)[:10]
        raise ValueError(
            f"county {county} not in {forecast_csv}; candidates include "
            f"{candidates}"
        )
    svg = render_fan_chart(forecasts[county], truth=truth)
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(svg)
