# "report.py" from libRDGSPy by NinjaCheetah & Contributors
#
# CSV reports and a small SVG scatter plot for rate-distortion curves. The SVG is written by hand, so plotting needs
# no extra dependency.

import csv
import io
import math
from xml.sax.saxutils import escape

from .types import CompositionEntry


def write_csv(path: str | None, columns: list[str], rows: list[dict]) -> str:
    """
    Writes rows as CSV. With no path the CSV text is only returned.

    Parameters
    ----------
    path : str or None
        Where to write the CSV.
    columns : list[str]
        Column names, in order. Keys of a row that are not listed are ignored.
    rows : list[dict]
        The rows.

    Returns
    -------
    str
        The CSV text.
    """
    with io.StringIO() as buffer:
        writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        text = buffer.getvalue()
    if path:
        with open(path, "w", newline="") as csv_file:
            csv_file.write(text)
    return text


def composition_rows(entries: list[CompositionEntry], section: str) -> list[dict]:
    total = sum(entry.size for entry in entries)
    rows = [{"section": section, "category": entry.category, "bytes": entry.size,
             "proportion": round(entry.proportion, 6)} for entry in entries]
    rows.append({"section": section, "category": "Total", "bytes": total, "proportion": 1.0})
    return rows


def ladder_rows(entries: list[CompositionEntry]) -> list[dict]:
    return [{"section": "savings", "category": entry.category, "bytes": entry.size,
             "proportion": round(entry.proportion, 6)} for entry in entries]


def rd_svg(points: list[tuple[float, float]], path: str | None = None, title: str = "Rate-distortion",
           x_label: str = "Size (MB)", y_label: str = "PSNR (dB)", width: int = 480, height: int = 320) -> str:
    """
    Draws (rate, quality) points as a connected scatter plot in SVG.

    Parameters
    ----------
    points : list[tuple[float, float]]
        The points. Non-finite values are left out.
    path : str, optional
        Where to write the SVG.
    title : str
        Plot title.
    x_label, y_label : str
        Axis labels.
    width, height : int
        Canvas size in pixels.

    Returns
    -------
    str
        The SVG document.
    """
    points = sorted((x, y) for x, y in points if math.isfinite(x) and math.isfinite(y))
    margin = 50
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" width="' + str(width) + '" height="' + str(height) + '">',
             '<rect width="100%" height="100%" fill="white"/>',
             '<text x="' + str(width / 2) + '" y="20" text-anchor="middle" font-size="14">' + escape(title) +
             '</text>']
    left, right, top, bottom = margin, width - 20, 30, height - margin
    parts.append('<line x1="' + str(left) + '" y1="' + str(bottom) + '" x2="' + str(right) + '" y2="' + str(bottom) +
                 '" stroke="black"/>')
    parts.append('<line x1="' + str(left) + '" y1="' + str(top) + '" x2="' + str(left) + '" y2="' + str(bottom) +
                 '" stroke="black"/>')
    parts.append('<text x="' + str((left + right) / 2) + '" y="' + str(height - 10) +
                 '" text-anchor="middle" font-size="12">' + escape(x_label) + '</text>')
    parts.append('<text x="15" y="' + str((top + bottom) / 2) + '" text-anchor="middle" font-size="12" '
                 'transform="rotate(-90 15 ' + str((top + bottom) / 2) + ')">' + escape(y_label) + '</text>')
    if points:
        xs, ys = [p[0] for p in points], [p[1] for p in points]
        x_min, x_max = min(xs), max(xs)
        y_min, y_max = min(ys), max(ys)
        x_span = x_max - x_min or 1.0
        y_span = y_max - y_min or 1.0

        def to_canvas(x, y):
            return (left + (x - x_min) / x_span * (right - left - 10) + 5,
                    bottom - (y - y_min) / y_span * (bottom - top - 10) - 5)

        canvas = [to_canvas(x, y) for x, y in points]
        parts.append('<polyline fill="none" stroke="steelblue" stroke-width="2" points="' +
                     " ".join(format(cx, ".2f") + "," + format(cy, ".2f") for cx, cy in canvas) + '"/>')
        for (cx, cy), (x, y) in zip(canvas, points):
            parts.append('<circle cx="' + format(cx, ".2f") + '" cy="' + format(cy, ".2f") +
                         '" r="3" fill="steelblue"><title>' + format(x, ".4g") + ", " + format(y, ".4g") +
                         '</title></circle>')
        parts.append('<text x="' + str(left) + '" y="' + str(bottom + 15) + '" font-size="10">' +
                     format(x_min, ".4g") + '</text>')
        parts.append('<text x="' + str(right) + '" y="' + str(bottom + 15) + '" text-anchor="end" font-size="10">' +
                     format(x_max, ".4g") + '</text>')
        parts.append('<text x="' + str(left - 5) + '" y="' + str(bottom) + '" text-anchor="end" font-size="10">' +
                     format(y_min, ".4g") + '</text>')
        parts.append('<text x="' + str(left - 5) + '" y="' + str(top + 5) + '" text-anchor="end" font-size="10">' +
                     format(y_max, ".4g") + '</text>')
    parts.append("</svg>")
    svg = "\n".join(parts) + "\n"
    if path:
        with open(path, "w") as svg_file:
            svg_file.write(svg)
    return svg
