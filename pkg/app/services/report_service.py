"""
Report Service for CSV artifacts, aligned text tables and the PDF deployment report
Uses ReportLab for the PDF rendering
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from app.models.schemas import BenchResult, CostModel, RunRecord, TrainReport
from app.services.cost_service import cost_model_cost, format_usd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REPORT_HEADER = ["cycle", "phase", "epoch", "train_loss", "train_acc", "val_acc", "params", "wall_time_s"]
SWEEP_HEADER = ["run_id", "seed", "width_multiplier", "dendrite_cycles", "params",
                "train_acc", "val_acc", "test_acc", "wall_time_s"]
FAILURE_HEADER = ["run_id", "seed", "width_multiplier", "dendrite_cycles", "error"]
BENCH_HEADER = ["label", "threads", "params", "batch_size", "units_per_s", "wall_time_s",
                "iterations", "optimal", "error"]
COST_HEADER = ["Instance", "Hourly Cost", "Experiment", "Total Parameters",
               "Units per second", "Cost per B units", "Optimal Batch Size"]


def _acc(value: float) -> str:
    return f"{value:.4f}"


def _seconds(value: float) -> str:
    return f"{value:.3f}"


def _write_rows(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"📝 Wrote {path}")
    return path


# ========== TRAINING / SWEEP ==========

def write_report_csv(report: TrainReport, path: PathLike) -> Path:
    return _write_rows(path, REPORT_HEADER, (
        [r.cycle, r.phase.value, r.epoch, f"{r.train_loss:.6f}", _acc(r.train_acc), _acc(r.val_acc),
         r.params, _seconds(r.wall_time_s)]
        for r in report.epochs
    ))


def write_sweep_csv(points: List[RunRecord], path: PathLike) -> Path:
    ordered = sorted(points, key=lambda p: (p.width_multiplier, p.dendrite_cycles, p.seed))
    return _write_rows(path, SWEEP_HEADER, (
        [p.run_id, p.seed, repr(float(p.width_multiplier)), p.dendrite_cycles, p.params,
         _acc(p.train_acc), _acc(p.val_acc), _acc(p.test_acc), _seconds(p.wall_time_s)]
        for p in ordered
    ))


def write_failures_csv(failures: List[RunRecord], path: PathLike) -> Path:
    return _write_rows(path, FAILURE_HEADER, (
        [p.run_id, p.seed, repr(float(p.width_multiplier)), p.dendrite_cycles, p.error]
        for p in failures
    ))


def describe_param_change(reduction_pct: float) -> str:
    if reduction_pct < 0:
        return f"{-reduction_pct:.1f}% more"
    return f"{reduction_pct:.1f}% fewer"


def format_compression_summary(baseline: Optional[RunRecord], compression: Sequence) -> str:
    if baseline is None:
        return "no full-width baseline cell in sweep"
    lines = [f"baseline m={baseline.width_multiplier:g}: val {_acc(baseline.val_acc)}, {baseline.params} params"]
    if not compression:
        lines.append("no dendrite cell reached the baseline")
    for point in compression:
        lines.append(f"m={point.width_multiplier:g} + {point.dendrite_cycles} cycles: val {_acc(point.val_acc)}, "
                     f"{point.params} params ({describe_param_change(point.reduction_pct)})")
    return "\n".join(lines)


# ========== DEPLOYMENT COSTS ==========

def cost_rows(models: Sequence[CostModel]) -> List[List[str]]:
    rows = []
    for m in models:
        rows.append([
            m.instance_label,
            f"${m.hourly_cost_usd:.2f}",
            m.experiment,
            f"{m.total_params:,}" if m.total_params is not None else "-",
            f"{m.throughput:,.0f}",
            f"${format_usd(cost_model_cost(m))}",
            str(m.optimal_batch) if m.optimal_batch is not None else "-",
        ])
    return rows


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned columns: text left, numbers right"""
    widths = [max(len(str(cell)) for cell in column) for column in zip(header, *rows)]
    numeric = [all(_looks_numeric(row[i]) for row in rows) for i in range(len(header))] if rows else []

    def line(cells: Sequence[str]) -> str:
        parts = []
        for i, cell in enumerate(cells):
            cell = str(cell)
            parts.append(cell.rjust(widths[i]) if numeric and numeric[i] else cell.ljust(widths[i]))
        return "  ".join(parts).rstrip()

    rule = "  ".join("-" * w for w in widths)
    return "\n".join([line(header), rule] + [line(r) for r in rows]) + "\n"


def _looks_numeric(cell: str) -> bool:
    stripped = str(cell).replace("$", "").replace(",", "").replace(".", "", 1)
    return stripped.isdigit() or cell == "-"


def format_cost_table(models: Sequence[CostModel]) -> str:
    return format_table(COST_HEADER, cost_rows(models))


def write_cost_csv(models: Sequence[CostModel], path: PathLike) -> Path:
    return _write_rows(path, [
        "instance_label", "hourly_cost_usd", "experiment", "total_params",
        "units_per_s", "cost_per_billion_usd", "optimal_batch",
    ], (
        [m.instance_label, m.hourly_cost_usd, m.experiment, m.total_params if m.total_params is not None else "",
         repr(float(m.throughput)), format_usd(cost_model_cost(m)),
         m.optimal_batch if m.optimal_batch is not None else ""]
        for m in models
    ))


def write_cost_pdf(models: Sequence[CostModel], path: PathLike, title: str = "Deployment Cost Report") -> Path:
    """One-page landscape PDF with the cost table"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = SimpleDocTemplate(
        str(path),
        pagesize=landscape(A4),
        rightMargin=0.5 * inch,
        leftMargin=0.5 * inch,
        topMargin=0.5 * inch,
        bottomMargin=0.5 * inch,
    )
    styles = getSampleStyleSheet()
    title_style = ParagraphStyle(
        'ReportTitle',
        parent=styles['Heading1'],
        fontSize=16,
        spaceAfter=20,
        alignment=TA_CENTER,
        textColor=colors.darkblue,
    )

    story = [Paragraph(title, title_style)]
    table = Table([COST_HEADER] + cost_rows(models), repeatRows=1)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
        ('TEXTCOLOR', (0, 0), (-1, 0), colors.black),
        ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
        ('ALIGN', (3, 1), (-1, -1), 'RIGHT'),
        ('FONTNAME', (0, 0), (-1, -1), 'Helvetica'),
        ('FONTSIZE', (0, 0), (-1, -1), 9),
        ('GRID', (0, 0), (-1, -1), 1, colors.black),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
    ]))
    story.append(table)
    story.append(Spacer(1, 12))
    story.append(Paragraph("Cost per B units = hourly cost / (units per second x 3600) x 1e9, "
                           "rounded half-even to 4 decimals.", styles['Normal']))
    doc.build(story)
    logger.info(f"📄 Wrote {path}")
    return path


# ========== BENCHMARKS ==========

def write_bench_csv(results: Sequence[BenchResult], path: PathLike) -> Path:
    rows = []
    for result in results:
        optimal = result.optimal_batch
        for row in result.rows:
            rows.append([result.label, result.threads, result.params, row.batch_size,
                         f"{row.units_per_s:.1f}", _seconds(row.wall_time_s), row.iterations,
                         int(row.batch_size == optimal), row.error or ""])
    return _write_rows(path, BENCH_HEADER, rows)
