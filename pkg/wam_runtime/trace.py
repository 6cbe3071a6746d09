"""
Simulation traces
Event records, the line-oriented trace file format and metric computation.

One event per line: `<kind> key=value ...` with fields in declaration order.
Floats use 17 significant digits, vectors are comma separated, strings are
shell-quoted.
"""
import logging
import shlex
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import ClassVar, Dict, Iterable, List, Tuple, Type, Union, get_type_hints

import numpy as np
import pandas as pd

from .errors import InputValidationError
from .schemas import Metrics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeaderEvent:
    KIND: ClassVar[str] = "header"
    control_hz: float
    model_hz: float
    horizon: int
    seed: int
    mode: str


@dataclass(frozen=True)
class TickEvent:
    """One executor tick; err is the plant's distance to the goal trajectory"""
    KIND: ClassVar[str] = "tick"
    t: float
    k: int
    chunk: int
    idx: int
    stall: bool
    err: float
    action: Tuple[float, ...]


@dataclass(frozen=True)
class InferStartEvent:
    KIND: ClassVar[str] = "infer_start"
    t: float
    req: int
    k: int
    s: int


@dataclass(frozen=True)
class InferFinishEvent:
    KIND: ClassVar[str] = "infer_finish"
    t: float
    req: int
    delta: float


@dataclass(frozen=True)
class FusionEvent:
    KIND: ClassVar[str] = "fusion"
    t: float
    old: int
    new: int
    s: int
    d: int
    L: int
    weights: Tuple[float, ...]

    def decision(self) -> tuple:
        """Everything but the timestamp"""
        return (self.old, self.new, self.s, self.d, self.L, self.weights)


@dataclass(frozen=True)
class StallEvent:
    KIND: ClassVar[str] = "stall"
    t: float
    k: int


@dataclass(frozen=True)
class ViolationEvent:
    """Realized delay exceeded the frozen-prefix budget"""
    KIND: ClassVar[str] = "violation"
    t: float
    req: int
    cause: str
    delta: float
    budget: float


@dataclass(frozen=True)
class ErrorEvent:
    KIND: ClassVar[str] = "error"
    t: float
    message: str


EVENT_TYPES: Dict[str, Type] = {
    cls.KIND: cls
    for cls in (HeaderEvent, TickEvent, InferStartEvent, InferFinishEvent,
                FusionEvent, StallEvent, ViolationEvent, ErrorEvent)
}


@dataclass
class SimTrace:
    events: List = field(default_factory=list)

    def append(self, event):
        self.events.append(event)

    def of_kind(self, cls: Type) -> List:
        return [e for e in self.events if isinstance(e, cls)]

    @property
    def header(self) -> HeaderEvent:
        headers = self.of_kind(HeaderEvent)
        if not headers:
            raise InputValidationError("trace has no header")
        return headers[0]

    def ticks(self) -> List[TickEvent]:
        return self.of_kind(TickEvent)

    def fusions(self) -> List[FusionEvent]:
        return self.of_kind(FusionEvent)

    def ticks_frame(self) -> pd.DataFrame:
        ticks = self.ticks()
        frame = pd.DataFrame([(e.t, e.k, e.chunk, e.idx, e.stall, e.err) for e in ticks],
                             columns=["t", "k", "chunk", "idx", "stall", "err"])
        actions = np.array([e.action for e in ticks]).reshape(len(ticks), -1)
        for dim in range(actions.shape[1]):
            frame[f"a{dim}"] = actions[:, dim]
        return frame


# Text format
def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, str):
        return shlex.quote(value)
    if isinstance(value, tuple):
        return ",".join(format(float(v), ".17g") for v in value)
    raise InputValidationError(f"cannot serialize trace value {value!r}")


def format_event(event) -> str:
    parts = [event.KIND]
    for f in fields(event):
        parts.append(f"{f.name}={_format_value(getattr(event, f.name))}")
    return " ".join(parts)


def _parse_value(raw: str, hint):
    if hint is bool:
        return raw != "0"
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    return tuple(float(v) for v in raw.split(",")) if raw else ()


def parse_event(line: str):
    tokens = shlex.split(line)
    if not tokens:
        raise InputValidationError("empty trace line")
    cls = EVENT_TYPES.get(tokens[0])
    if cls is None:
        raise InputValidationError(f"unknown trace event '{tokens[0]}'")
    hints = get_type_hints(cls)
    values = {}
    for token in tokens[1:]:
        key, sep, raw = token.partition("=")
        if not sep or key not in hints or key == "KIND":
            raise InputValidationError(f"bad field '{token}' in {tokens[0]} event")
        values[key] = _parse_value(raw, hints[key])
    try:
        return cls(**values)
    except TypeError as e:
        raise InputValidationError(f"incomplete {tokens[0]} event: {e}") from e


def write_trace(trace: SimTrace, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for event in trace.events:
            f.write(format_event(event) + "\n")


def read_trace(path: Union[str, Path]) -> SimTrace:
    trace = SimTrace()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                trace.append(parse_event(line))
            except InputValidationError as e:
                raise InputValidationError(f"{path}:{lineno}: {e}") from e
    return trace


# Metrics
def compute_metrics(trace: SimTrace) -> Metrics:
    """
    Metrics from the trace alone.

    A boundary jump is the action change between consecutive ticks whose chunk
    ids differ; intra-chunk jumps exclude stall ticks.
    """
    ticks = trace.ticks()
    if not ticks:
        return Metrics(bound_violations=len(trace.of_kind(ViolationEvent)))

    header = trace.header
    actions = np.array([e.action for e in ticks])
    chunks = np.array([e.chunk for e in ticks])
    stalls = np.array([e.stall for e in ticks])
    times = np.array([e.t for e in ticks])
    ks = np.array([e.k for e in ticks])

    jumps = np.linalg.norm(np.diff(actions, axis=0), axis=1)
    boundary = chunks[1:] != chunks[:-1]
    intra = ~boundary & ~stalls[1:]

    boundary_jumps = jumps[boundary]
    duration = times[-1] - times[0]
    period = 1.0 / header.control_hz

    return Metrics(
        max_boundary_jump=float(boundary_jumps.max()) if boundary_jumps.size else 0.0,
        mean_boundary_jump=float(boundary_jumps.mean()) if boundary_jumps.size else 0.0,
        mean_intra_chunk_jump=float(jumps[intra].mean()) if intra.any() else 0.0,
        stall_count=int(stalls.sum()),
        achieved_control_hz=float((len(ticks) - 1) / duration) if duration > 0 else 0.0,
        tracking_error=float(np.mean([e.err for e in ticks])),
        max_tick_jitter=float(np.max(np.abs(times - ks * period))),
        swap_count=int(boundary.sum()),
        bound_violations=len(trace.of_kind(ViolationEvent)),
    )


def metrics_frame(metrics: Union[Metrics, Iterable[Metrics]]) -> pd.DataFrame:
    rows = [metrics] if isinstance(metrics, Metrics) else list(metrics)
    return pd.DataFrame([m.model_dump() for m in rows])


def write_metrics_csv(metrics: Union[Metrics, Iterable[Metrics]], path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metrics_frame(metrics).to_csv(path, index=False, float_format="%.17g")


def replay_delays(trace: SimTrace) -> List[float]:
    """Measured delays in request order"""
    finishes = sorted(trace.of_kind(InferFinishEvent), key=lambda e: e.req)
    return [e.delta for e in finishes]
