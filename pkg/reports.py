"""
Report output: JSON files, pandas tables, CSV export and a plotly chart.
"""

import json
import logging
from pathlib import Path
from typing import Union

import pandas as pd
import plotly.graph_objects as go

from verifier import VerificationReport

logger = logging.getLogger(__name__)

VERDICT_COLUMNS = ["param", "layer", "role", "row", "col", "status", "analyzer_calls", "proved", "unresolved"]


def write_report_json(report: VerificationReport, path: Union[str, Path], include_timings: bool = True) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(include_timings), f, indent=2)
    logger.info("Report written to %s", path)
    return path


def verdicts_frame(report: VerificationReport) -> pd.DataFrame:
    """One row per analysed parameter."""
    rows = []
    for verdict in report.verdicts:
        param = verdict.param
        rows.append({
            "param": str(param),
            "layer": param.layer_index,
            "role": param.role,
            "row": param.row,
            "col": param.col,
            "status": verdict.status.value,
            "analyzer_calls": verdict.analyzer_calls,
            "proved": len(verdict.proved_subintervals),
            "unresolved": len(verdict.unresolved_subintervals),
        })
    return pd.DataFrame(rows, columns=VERDICT_COLUMNS)


def layer_summary(report: VerificationReport) -> pd.DataFrame:
    """Per layer: parameters analysed, Safe/Unknown counts and analyzer calls."""
    frame = verdicts_frame(report)
    if frame.empty:
        return pd.DataFrame(columns=["layer", "parameters", "safe", "unknown", "analyzer_calls"])
    frame["safe"] = frame["status"] == "Safe"
    frame["unknown"] = ~frame["safe"]
    summary = frame.groupby("layer").agg(
        parameters=("param", "count"),
        safe=("safe", "sum"),
        unknown=("unknown", "sum"),
        analyzer_calls=("analyzer_calls", "sum"),
    )
    return summary.reset_index().astype(int)


def export_csv(report: VerificationReport, path: Union[str, Path]) -> Path:
    path = Path(path)
    verdicts_frame(report).to_csv(path, index=False)
    return path


def calls_figure(report: VerificationReport) -> go.Figure:
    """Bar chart of analyzer calls per layer."""
    summary = layer_summary(report)
    x = [f"Layer {layer}" for layer in summary["layer"]]
    y = summary["analyzer_calls"].tolist()
    fig = go.Figure(data=[go.Bar(
        x=x,
        y=y,
        marker=dict(color="#667eea", line=dict(color="rgba(255,255,255,0.2)", width=1)),
        text=[f"{v:.0f}" if v > 0 else "" for v in y],
        textposition="outside",
    )])
    fig.update_layout(
        title=dict(text=f"Analyzer calls per layer ({report.mode.value})"),
        xaxis=dict(title="Layer"),
        yaxis=dict(title="Calls"),
        height=400,
        margin=dict(t=60, b=60, l=60, r=20),
    )
    return fig
