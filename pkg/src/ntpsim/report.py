"""Text and JSON renderings of a finished run."""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Optional

from .scenario import Verdict
from .simnet import Timeline

SCHEMA_VERSION = 1
COUNT_FIELDS = ("mode3", "mode4", "mode5", "kod")


def clock_label(seconds) -> str:
    """Whole seconds since scenario start as H:MM:SS."""
    s = int(seconds)
    return f"{s // 3600}:{s % 3600 // 60:02d}:{s % 60:02d}"


def _num(value: Optional[Fraction]):
    return None if value is None else round(float(value), 6)


def verdict_dict(verdict: Verdict) -> dict:
    def pair(p):
        return None if p is None else [_num(p[0]), _num(p[1])]

    return {
        "outcome": verdict.outcome.value,
        "attack_succeeded": verdict.attack_succeeded,
        "victim": verdict.victim,
        "attack_window": pair(verdict.attack_window),
        "initial_sync": _num(verdict.initial_sync),
        "desync_window": pair(verdict.desync_window),
        "desync_coverage": _num(verdict.desync_coverage),
        "resync_delay_after_stop": _num(verdict.resync_delay_after_stop),
        "calibration_attempts": verdict.calibration_attempts,
        "failed_attempts": verdict.failed_attempts,
        "probes_in_window": verdict.probes_in_window,
        "syncs_in_window": verdict.syncs_in_window,
        "max_sync_gap": _num(verdict.max_sync_gap),
        "counts": verdict.counts,
        "warnings": verdict.warnings,
    }


def emit_report(timeline: Timeline, verdict: Verdict, format: str = "text") -> str:
    if format == "json":
        doc = {
            "schema_version": SCHEMA_VERSION,
            "verdict": verdict_dict(verdict),
            "timeline": [{"t": _num(e.time), "actor": e.actor, "event": e.kind, "detail": e.detail}
                         for e in timeline],
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if format != "text":
        raise ValueError(f"unknown report format {format!r}")
    lines = [" ".join(filter(None, (clock_label(e.time), e.actor, e.kind, e.detail))) for e in timeline]
    lines.append("")
    lines.append(f"verdict: {verdict.outcome.value}")
    if verdict.initial_sync is not None:
        lines.append(f"initial sync: {clock_label(verdict.initial_sync)} ({float(verdict.initial_sync):.3f} s)")
    if verdict.attack_window is not None:
        a, b = verdict.attack_window
        lines.append(f"attack window: {clock_label(a)} - {clock_label(b)}")
        if verdict.desync_window is not None:
            lo, hi = verdict.desync_window
            hi_text = clock_label(hi) if hi is not None else "never"
            lines.append(f"desync window: {clock_label(lo)} - {hi_text}")
        if verdict.resync_delay_after_stop is not None:
            lines.append(f"resync after stop: {float(verdict.resync_delay_after_stop):.3f} s")
        lines.append(f"calibration attempts: {verdict.calibration_attempts} "
                     f"(failed {verdict.failed_attempts})")
        lines.append(f"probe responses in window: {verdict.probes_in_window}; "
                     f"victim syncs in window: {verdict.syncs_in_window}")
    lines.append("")
    width = max(len(n) for n in verdict.counts) if verdict.counts else 4
    lines.append(f"{'host':<{width}}  {'role':<16} " + " ".join(f"{f:>6}" for f in COUNT_FIELDS))
    for name, c in verdict.counts.items():
        lines.append(f"{name:<{width}}  {c['role']:<16} " + " ".join(f"{c[f]:>6}" for f in COUNT_FIELDS))
    for w in verdict.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"
