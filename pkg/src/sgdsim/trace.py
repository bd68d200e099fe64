"""Reader and writer for per-layer timing traces.

A trace is plain text, one layer per row, six columns: layer id, layer name,
forward time, backward time, exchange time (all microseconds), gradient size
in bytes. Columns are separated by whitespace or commas; times may use
scientific notation. Blank lines and `#` comments are ignored. A row whose
layer id is not greater than the previous row's starts a new iteration
block. A row with layer id 0 (and zero backward/exchange/size) is the data
layer: its forward column is the measured input-read time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import IO, Iterable

from .model import (
    ClusterSpec,
    InvalidProfile,
    IterationProfile,
    LayerProfile,
    WorkloadSpec,
)


class MalformedRow(ValueError):
    """A trace row that cannot be parsed; carries its 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InconsistentBlocks(ValueError):
    """Iteration blocks that do not describe the same network."""


class EmptyAfterWarmup(ValueError):
    """Discarding warmup iterations left nothing to average."""


@dataclass(frozen=True)
class TraceRecord:
    layer_id: int
    name: str
    forward_us: float
    backward_us: float
    comm_us: float
    size_bytes: int


@dataclass(frozen=True)
class TraceSet:
    """One or more measured iterations over the same layer sequence."""

    iterations: tuple[tuple[TraceRecord, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(tuple(b) for b in self.iterations))
        if not self.iterations or any(not block for block in self.iterations):
            raise InconsistentBlocks("trace must contain at least one non-empty iteration")
        shape = [(r.layer_id, r.name) for r in self.iterations[0]]
        for i, block in enumerate(self.iterations[1:], start=2):
            if [(r.layer_id, r.name) for r in block] != shape:
                raise InconsistentBlocks(
                    f"iteration block {i} lists different layers than block 1"
                )


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        try:
            value = float(token)
        except ValueError:
            raise MalformedRow(line, f"{what} {token!r} is not a number") from None
        if value != int(value):
            raise MalformedRow(line, f"{what} {token!r} is not an integer") from None
        return int(value)


def _parse_time(token: str, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedRow(line, f"{what} {token!r} is not a number") from None
    if value < 0:
        raise MalformedRow(line, f"{what} must be >= 0, got {token}")
    return value


def parse_trace(source: str | IO[str] | Iterable[str]) -> TraceSet:
    """Parse trace text (or a line iterable) into iteration blocks."""
    if isinstance(source, str):
        lines = source.splitlines()
    elif hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        lines = [line.rstrip("\n") for line in source]

    blocks: list[list[TraceRecord]] = []
    current: list[TraceRecord] = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        fields = text.replace(",", " ").split()
        if len(fields) != 6:
            raise MalformedRow(lineno, f"expected 6 columns, found {len(fields)}")
        record = TraceRecord(
            layer_id=_parse_int(fields[0], lineno, "layer id"),
            name=fields[1],
            forward_us=_parse_time(fields[2], lineno, "forward time"),
            backward_us=_parse_time(fields[3], lineno, "backward time"),
            comm_us=_parse_time(fields[4], lineno, "exchange time"),
            size_bytes=_parse_int(fields[5], lineno, "size"),
        )
        if record.layer_id < 0:
            raise MalformedRow(lineno, f"layer id must be >= 0, got {record.layer_id}")
        if record.size_bytes < 0:
            raise MalformedRow(lineno, f"size must be >= 0, got {record.size_bytes}")
        if current and record.layer_id <= current[-1].layer_id:
            blocks.append(current)
            current = []
        current.append(record)
    if current:
        blocks.append(current)
    if not blocks:
        raise MalformedRow(0, "trace contains no rows")
    return TraceSet(iterations=tuple(tuple(b) for b in blocks))


def trace_warnings(traces: TraceSet) -> list[str]:
    """Soft consistency findings, e.g. exchange time with no payload."""
    findings = []
    for i, block in enumerate(traces.iterations, start=1):
        for record in block:
            if record.comm_us > 0 and record.size_bytes == 0:
                findings.append(
                    f"iteration {i}, layer {record.layer_id} ({record.name}): "
                    f"exchange time {record.comm_us} with size 0"
                )
    return findings


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def write_trace(traces: TraceSet, stream: IO[str] | None = None) -> str:
    """Emit trace text that parse_trace reads back; floats keep 6 significant
    digits, so round-tripping is exact for values written by this function."""
    lines = []
    for block in traces.iterations:
        for r in block:
            lines.append(
                f"{r.layer_id} {r.name} {_fmt(r.forward_us)} {_fmt(r.backward_us)} "
                f"{_fmt(r.comm_us)} {r.size_bytes}"
            )
    text = "\n".join(lines) + ("\n" if lines else "")
    if stream is not None:
        stream.write(text)
    return text


def average_profile(traces: TraceSet, warmup: int = 0) -> IterationProfile:
    """Average the post-warmup iterations into one timing profile.

    The data layer (id 0) becomes the input-read time. Gradient sizes come
    from the first averaged iteration and must not vary. Copy and update
    times are not part of traces and default to zero.
    """
    if warmup < 0:
        raise EmptyAfterWarmup(f"warmup must be >= 0, got {warmup}")
    blocks = traces.iterations[warmup:]
    if not blocks:
        raise EmptyAfterWarmup(
            f"warmup {warmup} discards all {len(traces.iterations)} iterations"
        )

    count = len(blocks)
    io_time = 0.0
    layer_rows: list[list[TraceRecord]] = []
    for position, first in enumerate(blocks[0]):
        rows = [block[position] for block in blocks]
        if first.layer_id == 0:
            if any(r.backward_us or r.comm_us or r.size_bytes for r in rows):
                raise InvalidProfile("data layer rows must have zero backward/exchange/size")
            io_time = sum(r.forward_us for r in rows) / count
        else:
            if len({r.size_bytes for r in rows}) != 1:
                raise InconsistentBlocks(
                    f"layer {first.layer_id} changes gradient size across iterations"
                )
            layer_rows.append(rows)

    profiles = tuple(
        LayerProfile(
            layer_id=rows[0].layer_id,
            name=rows[0].name,
            forward_time=sum(r.forward_us for r in rows) / count,
            backward_time=sum(r.backward_us for r in rows) / count,
            comm_time=sum(r.comm_us for r in rows) / count,
            gradient_bytes=rows[0].size_bytes,
        )
        for rows in layer_rows
    )
    return IterationProfile(io_time=io_time, h2d_time=0.0, layer_profiles=profiles)


def derive_transfer_times(workload: WorkloadSpec, cluster: ClusterSpec) -> tuple[float, float]:
    """Input-read and host-to-device copy times (microseconds) from bandwidths.

    Both divide the per-GPU input bytes by the corresponding bandwidth; the
    read time is for a single GPU's share (disk contention between GPUs on a
    machine is the scheduler's job, not this formula's).
    """
    data = workload.input_bytes_per_gpu
    io_time = data / cluster.disk_bandwidth * 1e6
    h2d_time = data / cluster.h2d_bandwidth * 1e6
    return io_time, h2d_time
