"""CSV metric reports."""

from __future__ import annotations

import csv
import io

from .ap import DIFFICULTIES, EvalConfig, aos, average_precision

REPORT_COLUMNS = ("metric", "difficulty", "threshold", "value")
METRIC_NAMES = {"ap2d": "2d", "apbev": "bev", "ap3d": "3d", "aos": "aos"}


def evaluate(dets_per_image, gts_per_image, metric: str = "ap3d", iou: float = 0.7,
             interpolation: str = "r40", category: str = "Car") -> list[dict]:
    """One row per difficulty for a metric named as on the command line."""
    kind = METRIC_NAMES[metric]
    rows = []
    for difficulty in DIFFICULTIES:
        cfg = EvalConfig(iou, kind, interpolation, difficulty, category)
        fn = aos if kind == "aos" else average_precision
        rows.append(
            {
                "metric": f"{metric}|{interpolation}",
                "difficulty": difficulty,
                "threshold": iou,
                "value": fn(dets_per_image, gts_per_image, cfg),
            }
        )
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in REPORT_COLUMNS})
    return buf.getvalue()
