"""Box plots rendered straight to SVG.

One box per group on a fixed 640x480 canvas. The box spans Q1..Q3 with the
median as a line; whiskers reach the most extreme values within 1.5 IQR of
the box and everything beyond is drawn as a circle. Quartiles use linear
interpolation (numpy's default percentile method)."""

import logging
from typing import NamedTuple, Tuple

import numpy as np

from .errors import ContractViolation

logger = logging.getLogger(__name__)

width = 640
height = 480
margin = dict(left=70, right=20, top=40, bottom=60)
box_fraction = 0.5
outlier_radius = 3


class BoxStats(NamedTuple):
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    whisker_low: float
    whisker_high: float
    outliers: Tuple[float, ...]


def box_stats(values):
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise ContractViolation("box plot of an empty group")

    q1, median, q3 = np.percentile(values, [25, 50, 75])
    fence = 1.5 * (q3 - q1)
    inside = values[(values >= q1 - fence) & (values <= q3 + fence)]
    outliers = values[(values < q1 - fence) | (values > q3 + fence)]
    return BoxStats(float(values.min()), float(q1), float(median), float(q3), float(values.max()),
                    float(inside.min()), float(inside.max()),
                    tuple(float(x) for x in np.sort(outliers)))


# ------------------------------------------------------------------------
# svg helpers

def _number(x):
    x = round(float(x), 3)
    return int(x) if x == int(x) else x


def _element(tag, text=None, **props):
    attrs = " ".join(f'{k.replace("_", "-")}="{_number(v) if isinstance(v, float) else v}"'
                     for k, v in props.items())
    if text is None:
        return f"<{tag} {attrs}/>"
    return f"<{tag} {attrs}>{_escape(text)}</{tag}>"


def _escape(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _value_range(stats):
    low = min(s.minimum for s in stats)
    high = max(s.maximum for s in stats)
    if high == low:
        pad = 0.5 * abs(low) if low != 0 else 1.0
    else:
        pad = 0.05 * (high - low)
    return low - pad, high + pad


def _ticks(low, high, count=5):
    return np.linspace(low, high, count)


def render_boxplot(groups, title="", ylabel=""):
    """SVG document with one box per entry of `groups` (name -> values)"""

    if not groups:
        raise ContractViolation("box plot without any group")
    names = list(groups)
    stats = [box_stats(groups[name]) for name in names]

    low, high = _value_range(stats)
    x0, x1 = margin["left"], width - margin["right"]
    y0, y1 = height - margin["bottom"], margin["top"]

    def ypos(v):
        return y0 - (v - low) / (high - low) * (y0 - y1)

    slot = (x1 - x0) / len(names)
    half = 0.5 * box_fraction * slot

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        _element("rect", x=0, y=0, width=width, height=height, fill="white"),
        _element("text", title, x=width / 2, y=margin["top"] / 2 + 5, text_anchor="middle",
                 font_family="sans-serif", font_size=16),
        _element("line", x1=x0, y1=y0, x2=x1, y2=y0, stroke="black"),
        _element("line", x1=x0, y1=y0, x2=x0, y2=y1, stroke="black"),
        _element("text", ylabel, x=15, y=(y0 + y1) / 2, text_anchor="middle",
                 transform=f"rotate(-90 15 {_number((y0 + y1) / 2)})",
                 font_family="sans-serif", font_size=12),
    ]

    for v in _ticks(low, high):
        y = ypos(v)
        parts.append(_element("line", x1=x0 - 5, y1=y, x2=x0, y2=y, stroke="black"))
        parts.append(_element("text", f"{v:.4g}", x=x0 - 8, y=y + 4, text_anchor="end",
                              font_family="sans-serif", font_size=10))

    for k, (name, s) in enumerate(zip(names, stats)):
        cx = x0 + (k + 0.5) * slot
        parts.append(f'<g class="box" data-name="{_escape(name)}">')

        # whiskers and caps
        for a, b in ((s.whisker_low, s.q1), (s.q3, s.whisker_high)):
            parts.append(_element("line", x1=cx, y1=ypos(a), x2=cx, y2=ypos(b), stroke="black"))
        for w in (s.whisker_low, s.whisker_high):
            parts.append(_element("line", x1=cx - half / 2, y1=ypos(w), x2=cx + half / 2, y2=ypos(w),
                                  stroke="black"))

        top = ypos(s.q3)
        parts.append(_element("rect", x=cx - half, y=top, width=2 * half, height=ypos(s.q1) - top,
                              fill="#9ecae1", stroke="black"))
        parts.append(_element("line", x1=cx - half, y1=ypos(s.median), x2=cx + half, y2=ypos(s.median),
                              stroke="#d62728", stroke_width=2))

        for v in s.outliers:
            parts.append(_element("circle", cx=cx, cy=ypos(v), r=outlier_radius, fill="none",
                                  stroke="black"))

        parts.append(_element("text", name, x=cx, y=y0 + 20, text_anchor="middle",
                              font_family="sans-serif", font_size=11))
        parts.append("</g>")

    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_boxplot(path, groups, title="", ylabel=""):
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_boxplot(groups, title, ylabel))
    logger.debug(f"wrote box plot {path}")
