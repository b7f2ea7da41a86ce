#!/usr/bin/env python3
"""
Human-readable run reports.

Summaries are rendered from Jinja2 templates in ``templates/``. Rendering is
never allowed to fail a run: a plain-text fallback is returned instead.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined, select_autoescape

from .error_recovery import get_recovery_handler
from .gradcheck import GradcheckReport
from .metrics import BoundRow, DriftReport

TEMPLATE_DIR = Path(__file__).parent.parent / "templates"

_env: Optional[Environment] = None


def _format_float(value: Any, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}g}" if isinstance(value, float) else str(value)


def get_environment() -> Environment:
    global _env
    if _env is None:
        _env = Environment(
            loader=FileSystemLoader(str(TEMPLATE_DIR)),
            autoescape=select_autoescape(['html', 'xml']),
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
        )
        _env.filters['num'] = _format_float
    return _env


def render_template(template_name: str, **context) -> str:
    return get_environment().get_template(template_name).render(**context)


def render_compare_summary(title: str, reports: Dict[int, List[DriftReport]]) -> str:
    """
    Markdown table of paired-run results.

    Args:
        title: Experiment name shown in the heading
        reports: seed -> one DriftReport per compared method (BP is side a)

    Returns:
        Rendered markdown
    """
    seeds = sorted(reports)
    labels = [r.label_b for r in reports[seeds[0]]] if seeds else []
    rows = []
    for seed in seeds:
        first = reports[seed][0]
        rows.append({
            "seed": seed,
            "baseline_accuracy": first.final_accuracy_a,
            "methods": [r.summary() for r in reports[seed]],
        })
    positive = {label: sum(1 for seed in seeds for r in reports[seed]
                           if r.label_b == label and r.reduction_sign > 0)
                for label in labels}
    context = {"title": title, "labels": labels, "rows": rows, "positive": positive,
               "seed_count": len(seeds), "baseline": reports[seeds[0]][0].label_a if seeds else "bp"}

    lines = [f"# {title}", ""]
    for row in rows:
        for method in row["methods"]:
            lines.append(f"seed {row['seed']} {method['label_b']}: mean drift reduction "
                         f"{method['mean_reduction_tail']:.6g} (sign {method['reduction_sign']:+d})")
    fallback = "\n".join(lines) + "\n"
    return get_recovery_handler().safe_render(
        lambda: render_template("compare_summary.md.j2", **context), fallback)


def render_boundcheck_summary(rows: Sequence[BoundRow], rescale_violations: int,
                              rescale_samples: int) -> str:
    """Markdown summary of a bound check: per method and layer, the worst slack."""
    groups: Dict[tuple, Dict[str, Any]] = {}
    for row in rows:
        key = (row.method, row.layer, row.mode)
        group = groups.setdefault(key, {"method": row.method, "layer": row.layer, "mode": row.mode,
                                        "rows": 0, "failed": 0, "min_slack": row.slack,
                                        "max_weight_term": 0.0})
        group["rows"] += 1
        group["failed"] += 0 if row.passed else 1
        group["min_slack"] = min(group["min_slack"], row.slack)
        group["max_weight_term"] = max(group["max_weight_term"], row.weight_term)
    failed = sum(1 for row in rows if not row.passed)
    context = {"groups": [groups[k] for k in sorted(groups)], "total": len(rows), "failed": failed,
               "rescale_violations": rescale_violations, "rescale_samples": rescale_samples}
    fallback = (f"Bound check: {len(rows) - failed}/{len(rows)} rows hold; "
                f"rescale violations {rescale_violations}/{rescale_samples}\n")
    return get_recovery_handler().safe_render(
        lambda: render_template("boundcheck_summary.md.j2", **context), fallback)


def render_gradcheck_report(report: GradcheckReport) -> str:
    fallback = (f"gradcheck seed={report.seed} cases={len(report.cases)} "
                f"max_rel_err={report.max_relative_error:.3e} "
                f"max_collapse={report.max_collapse_residual:.3e} "
                f"{'PASS' if report.passed else 'FAIL'}\n")
    worst = sorted(report.cases, key=lambda c: c.max_relative_error, reverse=True)[:5]
    return get_recovery_handler().safe_render(
        lambda: render_template("gradcheck_report.txt.j2", report=report, worst=worst), fallback)
