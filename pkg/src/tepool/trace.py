"""Run-trace persistence: line-delimited JSON, one object per round.

Layout: a header object carrying the format version and run metadata,
one object per executed round, and a footer with the outcome. Floats
serialize at full round-trip precision, so read(write(x)) reproduces x
exactly. Streamable and diff-friendly for long runs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .consensus import RunTrace

TRACE_FORMAT_VERSION = 1
_KIND = "tepool-trace"


class TraceFormatError(Exception):
    """Trace file is malformed or from an incompatible format version."""


def write_trace(trace: RunTrace, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        header = {
            "kind": _KIND,
            "format_version": TRACE_FORMAT_VERSION,
            "agent_ids": list(trace.agent_ids),
            "epsilon": trace.epsilon,
        }
        fh.write(json.dumps(header) + "\n")
        for r in range(trace.rounds):
            row = {
                "round": r + 1,
                "lambda": np.asarray(trace.lambdas[r]).tolist(),
                "e_norm": np.asarray(trace.e_norms[r]).tolist(),
                "clearing": np.asarray(trace.clearing[r]).tolist(),
                "sum_e": np.asarray(trace.sum_e[r]).tolist(),
                "objective": np.asarray(trace.objectives[r]).tolist(),
            }
            fh.write(json.dumps(row) + "\n")
        footer = {
            "converged": trace.converged,
            "rounds": trace.rounds,
            "wall_time_s": trace.wall_time_s,
        }
        fh.write(json.dumps(footer) + "\n")


def read_trace(path) -> RunTrace:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise TraceFormatError(f"{path}: empty trace file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}:1: not valid JSON: {exc}") from None
    if header.get("kind") != _KIND:
        raise TraceFormatError(f"{path}: not a trace file")
    version = header.get("format_version")
    if version != TRACE_FORMAT_VERSION:
        raise TraceFormatError(
            f"{path}: trace format_version {version} incompatible "
            f"(this build reads {TRACE_FORMAT_VERSION})"
        )
    if len(lines) < 2:
        raise TraceFormatError(f"{path}: missing footer")
    trace = RunTrace(
        agent_ids=list(header["agent_ids"]), epsilon=float(header["epsilon"])
    )
    try:
        footer = json.loads(lines[-1])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: bad footer: {exc}") from None
    for ln, line in enumerate(lines[1:-1], start=2):
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}:{ln}: not valid JSON: {exc}") from None
        try:
            trace.lambdas.append(np.array(row["lambda"], dtype=float))
            trace.e_norms.append(np.array(row["e_norm"], dtype=float))
            trace.clearing.append(np.array(row["clearing"], dtype=float))
            trace.sum_e.append(np.array(row["sum_e"], dtype=float))
            trace.objectives.append(np.array(row["objective"], dtype=float))
        except KeyError as exc:
            raise TraceFormatError(f"{path}:{ln}: missing field {exc}") from None
    trace.rounds = len(trace.lambdas)
    try:
        trace.converged = bool(footer["converged"])
        trace.wall_time_s = float(footer["wall_time_s"])
        if int(footer["rounds"]) != trace.rounds:
            raise TraceFormatError(
                f"{path}: footer says {footer['rounds']} rounds, "
                f"file has {trace.rounds}"
            )
    except KeyError as exc:
        raise TraceFormatError(f"{path}: footer missing field {exc}") from None
    return trace
