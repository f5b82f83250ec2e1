"""Flat, self-describing trace files.

One record per line: a record type followed by ``key=value`` tokens separated
by spaces. Values are percent-encoded so they never contain whitespace, which
keeps the format stream-appendable and parseable with a line splitter in any
language. A file holds one ``header`` record (problem metadata and constants),
then per run a ``run`` record (method, seed, and the resolved configuration)
followed by its ``epoch`` records.

Wall-clock fields are the only nondeterministic content; comparisons of
byte-level determinism should go through :func:`strip_wall`.
"""

from __future__ import annotations

import re
import urllib.parse
from dataclasses import dataclass, field

from .solvers import RunTrace

__all__ = [
    "TraceParseError",
    "RunBlock",
    "TraceFileData",
    "format_record",
    "parse_record",
    "write_trace_file",
    "parse_trace_file",
    "strip_wall",
]


class TraceParseError(ValueError):
    pass


def _encode(val) -> str:
    if isinstance(val, float):
        text = repr(val)
    else:
        text = str(val)
    return urllib.parse.quote(text, safe="")


def _decode(text: str) -> str:
    return urllib.parse.unquote(text)


def format_record(kind: str, fields: dict) -> str:
    toks = [kind] + [f"{k}={_encode(v)}" for k, v in fields.items()]
    return " ".join(toks)


def parse_record(line: str, lineno: int = 0) -> tuple[str, dict]:
    toks = line.split()
    if not toks:
        raise TraceParseError(f"line {lineno}: empty record")
    kind = toks[0]
    fields = {}
    for tok in toks[1:]:
        if "=" not in tok:
            raise TraceParseError(f"line {lineno}: token {tok!r} is not key=value")
        key, val = tok.split("=", 1)
        fields[key] = _decode(val)
    return kind, fields


@dataclass
class RunBlock:
    config: dict
    epochs: list[dict] = field(default_factory=list)

    @property
    def method(self) -> str:
        return self.config.get("method", "?")


@dataclass
class TraceFileData:
    header: dict
    runs: list[RunBlock]

    def problem_key(self) -> tuple:
        """Fields that must agree for traces to be comparable."""
        keys = ("n", "d", "nnz", "loss", "mu", "reg_mode", "L_hat")
        return tuple(self.header.get(k) for k in keys)


EPOCH_FIELDS = (
    "epoch", "f", "gap", "grad_evals", "partial_evals", "column_touches",
    "value_evals", "inner_steps", "wall_ms",
)


def trace_records(trace: RunTrace, run_fields: dict) -> list[str]:
    """Render one solver run as a ``run`` line plus its ``epoch`` lines."""
    lines = [format_record("run", run_fields)]
    base = {"method": trace.method, "seed": trace.seed}
    for rec in trace.records:
        fields = dict(base)
        for name in EPOCH_FIELDS:
            fields[name] = getattr(rec, name)
        lines.append(format_record("epoch", fields))
    return lines


def write_trace_file(path: str, header: dict, run_lines: list[str]) -> None:
    with open(path, "w") as fh:
        fh.write(format_record("header", header) + "\n")
        for line in run_lines:
            fh.write(line + "\n")


def parse_trace_file(path: str) -> TraceFileData:
    header = None
    runs: list[RunBlock] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            kind, fields = parse_record(line, lineno)
            if kind == "header":
                if header is not None:
                    raise TraceParseError(f"line {lineno}: duplicate header")
                header = fields
            elif kind == "run":
                runs.append(RunBlock(config=fields))
            elif kind == "epoch":
                if not runs:
                    raise TraceParseError(f"line {lineno}: epoch before any run")
                runs[-1].epochs.append(fields)
            else:
                raise TraceParseError(f"line {lineno}: unknown record kind {kind!r}")
    if header is None:
        raise TraceParseError(f"{path}: missing header record")
    return TraceFileData(header=header, runs=runs)


_WALL_RE = re.compile(r" wall_ms=[^ \n]*")


def strip_wall(text: str) -> str:
    """Remove wall-clock tokens so deterministic content can be compared."""
    return _WALL_RE.sub("", text)
