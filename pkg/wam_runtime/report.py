"""
Inference latency report
Cumulative-optimization accounting from latency presets, with CSV and
styled Excel export.
"""
import logging
from pathlib import Path
from typing import List, Optional, Union

import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill

from .errors import InputValidationError
from .toy_world_model import LatencyPreset, latency_of, load_latency_presets

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "configuration", "steps", "per_step_ms", "latency_s", "frequency_hz", "speedup",
    "reported_latency_s", "reported_frequency_hz", "reported_speedup", "latency_residual", "reported_ratio_speedup",
]


def _steps_label(preset: LatencyPreset) -> str:
    model = preset.model
    if model.effective_evals is not None:
        return f"{model.steps} ({model.effective_evals:g} eff.)"
    if model.mode.value == "v2a":
        return f"{model.steps} ({model.joint_prefix} joint)"
    return str(model.steps)


def table3_report(presets: Optional[List[LatencyPreset]] = None) -> pd.DataFrame:
    """
    One row per cumulative configuration; speedups are latency ratios
    against the first row. `latency_residual` is (model - reported) / reported,
    `reported_ratio_speedup` the speedup implied by the reported latencies.
    """
    presets = presets if presets is not None else load_latency_presets()
    if not presets:
        raise InputValidationError("no latency presets to report")

    baseline = latency_of(presets[0].model).latency_s
    reported_baseline = presets[0].reported_latency

    rows = []
    for preset in presets:
        estimate = latency_of(preset.model)
        row = {
            "configuration": preset.model.name,
            "steps": _steps_label(preset),
            "per_step_ms": preset.model.per_step_ms if preset.reported_per_step else None,
            "latency_s": estimate.latency_s,
            "frequency_hz": estimate.frequency_hz,
            "speedup": baseline / estimate.latency_s,
            "reported_latency_s": preset.reported_latency,
            "reported_frequency_hz": preset.reported_frequency,
            "reported_speedup": preset.reported_speedup,
            "latency_residual": None,
            "reported_ratio_speedup": None,
        }
        if preset.reported_latency:
            row["latency_residual"] = (estimate.latency_s - preset.reported_latency) / preset.reported_latency
            if reported_baseline:
                row["reported_ratio_speedup"] = reported_baseline / preset.reported_latency
        if row["latency_residual"] is not None and abs(row["latency_residual"]) > 0.03:
            logger.info("%s: modeled latency %.3f s differs from reported %.2f s by %.1f%%",
                        preset.model.name, estimate.latency_s, preset.reported_latency,
                        100 * row["latency_residual"])
        rows.append(row)

    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def format_report(report: pd.DataFrame) -> str:
    """Console table in the reported units"""
    view = pd.DataFrame({
        "Configuration": report["configuration"],
        "Steps": report["steps"],
        "Per-step (ms)": report["per_step_ms"].map(lambda v: "--" if pd.isna(v) else f"{v:.1f}"),
        "Latency (s)": report["latency_s"].map(lambda v: f"{v:.2f}"),
        "Frequency (Hz)": report["frequency_hz"].map(lambda v: f"{v:.2f}"),
        "Speedup": report["speedup"].map(lambda v: f"{v:.2f}x"),
        "Residual": report["latency_residual"].map(lambda v: "" if pd.isna(v) else f"{100 * v:+.1f}%"),
    })
    return view.to_string(index=False)


def write_report_csv(report: pd.DataFrame, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(path, index=False, float_format="%.17g")


def export_report_xlsx(report: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Styled workbook: title block, blue header row, residual cells colour coded"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    start_row = 4

    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        report.to_excel(writer, sheet_name="Latency", index=False, startrow=start_row - 1)
        worksheet = writer.sheets["Latency"]

        worksheet["A1"] = "INFERENCE LATENCY REPORT"
        worksheet["A1"].font = Font(size=16, bold=True)
        worksheet["A2"] = "Baseline:"
        worksheet["B2"] = report["configuration"].iloc[0]
        worksheet["A2"].font = Font(bold=True)

        header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
        header_font = Font(color="FFFFFF", bold=True)
        for col in range(1, len(report.columns) + 1):
            cell = worksheet.cell(row=start_row, column=col)
            cell.fill = header_fill
            cell.font = header_font
            cell.alignment = Alignment(horizontal="center", vertical="center")

        residual_col = report.columns.get_loc("latency_residual") + 1
        for row_idx in range(start_row + 1, start_row + 1 + len(report)):
            for col_idx in range(1, len(report.columns) + 1):
                cell = worksheet.cell(row=row_idx, column=col_idx)
                cell.alignment = Alignment(horizontal="center", vertical="center")
                if col_idx == residual_col and cell.value is not None:
                    if abs(cell.value) <= 0.05:
                        cell.fill = PatternFill(start_color="C6EFCE", end_color="C6EFCE", fill_type="solid")
                        cell.font = Font(color="006100", bold=True)
                    else:
                        cell.fill = PatternFill(start_color="FFC7CE", end_color="FFC7CE", fill_type="solid")
                        cell.font = Font(color="9C0006", bold=True)

        for idx, name in enumerate(report.columns):
            letter = worksheet.cell(row=start_row, column=idx + 1).column_letter
            worksheet.column_dimensions[letter].width = max(12, len(name) + 4)

    logger.info("Latency report written to %s", path)
    return path
