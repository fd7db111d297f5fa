"""Round-robin time-series archives with consolidation.

Samples arrive on a fixed base step (the host's poll delay). Each step bin
holds one primary data point per variable; completed bins feed a set of
archives, each consolidating a fixed number of bins per row with one of
AVERAGE, MIN, MAX or LAST. Rows live in circular buffers, so a database
never grows: its serialized size is a constant of its spec.
"""

from __future__ import annotations

import enum
import math
import os
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np


class ConsFunc(enum.Enum):
    AVERAGE = "AVERAGE"
    MIN = "MIN"
    MAX = "MAX"
    LAST = "LAST"


class RrdError(Exception):
    pass


class StaleTimestamp(RrdError):
    """An update landed in an earlier bin than one already finalized."""


class UnknownVariable(RrdError):
    pass


class NoMatchingArchive(RrdError):
    pass


class CorruptFile(RrdError):
    pass


class SpecMismatch(RrdError):
    """An on-disk database was built from a different spec."""


@dataclass(frozen=True)
class ArchiveSpec:
    cf: ConsFunc
    xff: float
    granularity: float
    expire: float


@dataclass(frozen=True)
class RrdSpec:
    step: float
    variables: tuple
    archives: tuple

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if len(set(self.variables)) != len(self.variables):
            raise ValueError("duplicate variable names")
        for arc in self.archives:
            ppw = arc.granularity / self.step
            if abs(ppw - round(ppw)) > 1e-9 or round(ppw) < 1:
                raise ValueError(
                    f"granularity {arc.granularity} is not a multiple of step {self.step}")
            if arc.expire < arc.granularity:
                raise ValueError(f"expire {arc.expire} below granularity {arc.granularity}")
            if not 0.0 <= arc.xff <= 1.0:
                raise ValueError(f"xff {arc.xff} outside [0, 1]")


@dataclass(frozen=True)
class FetchResult:
    cf: ConsFunc
    granularity: float
    times: np.ndarray            # row end times, seconds
    values: dict                 # variable -> np.ndarray aligned with times


class _Archive:
    """One consolidation buffer: epoch-aligned windows of `ppw` bins each."""

    def __init__(self, spec: ArchiveSpec, step: float, nvar: int):
        self.spec = spec
        self.ppw = int(round(spec.granularity / step))
        self.span = self.ppw * step          # effective row width in seconds
        self.rows = int(math.ceil(spec.expire / spec.granularity - 1e-9))
        self.nvar = nvar
        self.data = np.full((self.rows, nvar), np.nan)
        self.windows = np.full(self.rows, -1, dtype=np.int64)
        self.head = 0
        self.count = 0
        self._reset_window()
        self.window_fill = 0
        self.window_index = -1   # window currently accumulating; -1 before first bin

    def _reset_window(self):
        if self.spec.cf == ConsFunc.AVERAGE:
            self.acc = np.zeros(self.nvar)
        else:
            self.acc = np.full(self.nvar, np.nan)
        self.acc_known = np.zeros(self.nvar, dtype=np.int64)

    def consume(self, bin_index: int, values: np.ndarray) -> None:
        """Fold one finalized bin into the current window; bins arrive in order."""
        window = bin_index // self.ppw
        if self.window_index == -1:
            self.window_index = window
            # bins before the database existed count as unknown slots
            self.window_fill = bin_index % self.ppw
        known = ~np.isnan(values)
        if self.spec.cf == ConsFunc.AVERAGE:
            self.acc = self.acc + np.where(known, values, 0.0)
        elif self.spec.cf == ConsFunc.MIN:
            self.acc = np.fmin(self.acc, values)
        elif self.spec.cf == ConsFunc.MAX:
            self.acc = np.fmax(self.acc, values)
        else:
            self.acc = np.where(known, values, self.acc)
        self.acc_known = self.acc_known + known
        self.window_fill += 1
        if self.window_fill >= self.ppw:
            self._emit()

    def _emit(self) -> None:
        known = self.acc_known
        if self.spec.cf == ConsFunc.AVERAGE:
            with np.errstate(invalid="ignore", divide="ignore"):
                cdp = self.acc / known
        else:
            cdp = self.acc
        # a row is known only when enough of its bins were: the known
        # fraction must reach xff and at least one bin must be known
        valid = (known >= self.spec.xff * self.ppw - 1e-9) & (known >= 1)
        row = np.where(valid, cdp, np.nan)
        self.data[self.head] = row
        self.windows[self.head] = self.window_index
        self.head = (self.head + 1) % self.rows
        self.count = min(self.count + 1, self.rows)
        self.window_index += 1
        self.window_fill = 0
        self._reset_window()

    def row_by_window(self) -> dict:
        out = {}
        for i in range(self.rows):
            if self.windows[i] >= 0:
                out[int(self.windows[i])] = i
        return out

    def newest_end_time(self) -> float | None:
        if self.count == 0:
            return None
        return (int(self.windows.max()) + 1) * self.span

    def iter_rows(self):
        """Yield (end_time, vector) oldest first."""
        order = []
        for i in range(self.rows):
            if self.windows[i] >= 0:
                order.append((int(self.windows[i]), i))
        for window, i in sorted(order):
            yield (window + 1) * self.span, self.data[i]


class Rrd:
    """A fixed-size multi-variable round-robin database."""

    FORMAT_VERSION = 1
    _MAGIC = b"RRDB"

    def __init__(self, spec: RrdSpec):
        self.spec = spec
        nvar = len(spec.variables)
        self._lock = threading.Lock()   # one writer, any number of readers
        self._var_index = {name: i for i, name in enumerate(spec.variables)}
        self.archives = [_Archive(arc, spec.step, nvar) for arc in spec.archives]
        self._pdp_bin = -1                       # bin currently pending; -1 before first update
        self._pending = np.full(nvar, np.nan)
        self._last_value = np.full(nvar, np.nan)  # most recent known raw sample
        self._last_time = np.full(nvar, np.nan)   # and when it was observed
        self._last_update = math.nan

    # -- updates ---------------------------------------------------------

    def update(self, timestamp: float, values: dict) -> None:
        """Record one sample; None or a missing key means unknown.

        Within a bin the latest sample wins wholesale. A jump past the
        pending bin finalizes it, emits unknown bins for any gap, and starts
        a fresh pending bin. Going back before the pending bin is an error.
        """
        for name in values:
            if name not in self._var_index:
                raise UnknownVariable(f"no variable named {name!r}")
        with self._lock:
            bin_index = math.floor(timestamp / self.spec.step)
            if self._pdp_bin != -1 and bin_index < self._pdp_bin:
                raise StaleTimestamp(
                    f"update for bin {bin_index} after bin {self._pdp_bin} was started")
            vector = np.full(len(self.spec.variables), np.nan)
            for name, value in values.items():
                if value is not None:
                    vector[self._var_index[name]] = float(value)
            if self._pdp_bin == -1 or bin_index == self._pdp_bin:
                self._pdp_bin = bin_index
                self._pending = vector
            else:
                self._finalize_through(bin_index)
                self._pending = vector
            known = ~np.isnan(vector)
            self._last_value = np.where(known, vector, self._last_value)
            self._last_time = np.where(known, float(timestamp), self._last_time)
            self._last_update = float(timestamp)

    def _finalize_through(self, new_bin: int) -> None:
        nan_row = np.full(len(self.spec.variables), np.nan)
        for arc in self.archives:
            arc.consume(self._pdp_bin, self._pending)
        for gap_bin in range(self._pdp_bin + 1, new_bin):
            for arc in self.archives:
                arc.consume(gap_bin, nan_row)
        self._pdp_bin = new_bin

    # -- reads -----------------------------------------------------------

    def last_values(self) -> dict:
        """Most recent known raw sample per variable, with its timestamp."""
        out = {}
        with self._lock:
            for name, i in self._var_index.items():
                if math.isnan(self._last_time[i]):
                    out[name] = None
                else:
                    out[name] = (float(self._last_value[i]), float(self._last_time[i]))
        return out

    def last_update(self) -> float | None:
        with self._lock:
            return None if math.isnan(self._last_update) else self._last_update

    def fetch(self, cf: ConsFunc, start: float, end: float) -> FetchResult:
        """Rows covering [start, end] from the best-fitting archive.

        Prefers the finest granularity whose retention still reaches back to
        `start`; if none does, falls back to the coarsest. Windows without a
        stored row come back unknown, so the time column is always complete.
        """
        if not end > start:
            raise ValueError(f"need start < end, got [{start}, {end}]")
        candidates = [a for a in self.archives if a.spec.cf == cf]
        if not candidates:
            raise NoMatchingArchive(f"no archive consolidates with {cf.value}")
        candidates.sort(key=lambda a: a.span)
        with self._lock:
            newest = max((a.newest_end_time() or -math.inf) for a in candidates)
            chosen = None
            for arc in candidates:
                if newest == -math.inf or start >= newest - arc.spec.expire:
                    chosen = arc
                    break
            if chosen is None:
                chosen = candidates[-1]

            first_window = math.floor(start / chosen.span)
            last_window = first_window
            while (last_window + 1) * chosen.span < end - 1e-9:
                last_window += 1
            lookup = chosen.row_by_window()
            n = last_window - first_window + 1
            times = np.empty(n)
            grid = np.full((n, len(self.spec.variables)), np.nan)
            for k in range(n):
                window = first_window + k
                times[k] = (window + 1) * chosen.span
                row = lookup.get(window)
                if row is not None:
                    grid[k] = chosen.data[row]
        values = {name: grid[:, i] for name, i in self._var_index.items()}
        return FetchResult(cf=cf, granularity=chosen.span, times=times, values=values)

    # -- persistence -----------------------------------------------------

    def to_bytes(self) -> bytes:
        with self._lock:
            return self._to_bytes_locked()

    def _to_bytes_locked(self) -> bytes:
        names = [name.encode("utf-8") for name in self.spec.variables]
        parts = [struct.pack("<dII", self.spec.step, len(names), len(self.archives))]
        for raw in names:
            parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<qd", self._pdp_bin, self._last_update))
        parts.append(self._pending.tobytes())
        parts.append(self._last_value.tobytes())
        parts.append(self._last_time.tobytes())
        for arc in self.archives:
            cf_code = list(ConsFunc).index(arc.spec.cf)
            parts.append(struct.pack(
                "<BdddIIqI", cf_code, arc.spec.xff, arc.spec.granularity,
                arc.spec.expire, arc.head, arc.count, arc.window_index,
                arc.window_fill))
            parts.append(arc.acc.tobytes())
            parts.append(arc.acc_known.tobytes())
            parts.append(arc.windows.tobytes())
            parts.append(arc.data.tobytes())
        payload = b"".join(parts)
        header = self._MAGIC + struct.pack("<II", self.FORMAT_VERSION, zlib.crc32(payload))
        return header + payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Rrd":
        if len(blob) < 12 or blob[:4] != cls._MAGIC:
            raise CorruptFile("bad magic")
        version, crc = struct.unpack_from("<II", blob, 4)
        if version != cls.FORMAT_VERSION:
            raise CorruptFile(f"unsupported format version {version}")
        payload = blob[12:]
        if zlib.crc32(payload) != crc:
            raise CorruptFile("checksum mismatch")
        try:
            return cls._parse_payload(payload)
        except (struct.error, ValueError, IndexError) as exc:
            raise CorruptFile(f"truncated or inconsistent body: {exc}") from None

    @classmethod
    def _parse_payload(cls, payload: bytes) -> "Rrd":
        off = 0
        step, nvar, narch = struct.unpack_from("<dII", payload, off)
        off += struct.calcsize("<dII")
        names = []
        for _ in range(nvar):
            (nlen,) = struct.unpack_from("<H", payload, off)
            off += 2
            names.append(payload[off:off + nlen].decode("utf-8"))
            off += nlen
        pdp_bin, last_update = struct.unpack_from("<qd", payload, off)
        off += struct.calcsize("<qd")

        def read_f64(count):
            nonlocal off
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off).copy()
            off += 8 * count
            return arr

        pending = read_f64(nvar)
        last_value = read_f64(nvar)
        last_time = read_f64(nvar)
        arch_specs = []
        arch_state = []
        for _ in range(narch):
            cf_code, xff, gran, expire, head, count, window_index, window_fill = \
                struct.unpack_from("<BdddIIqI", payload, off)
            off += struct.calcsize("<BdddIIqI")
            spec = ArchiveSpec(cf=list(ConsFunc)[cf_code], xff=xff,
                               granularity=gran, expire=expire)
            rows = int(math.ceil(expire / gran - 1e-9))
            acc = read_f64(nvar)
            acc_known = np.frombuffer(payload, dtype="<i8", count=nvar, offset=off).copy()
            off += 8 * nvar
            windows = np.frombuffer(payload, dtype="<i8", count=rows, offset=off).copy()
            off += 8 * rows
            data = read_f64(rows * nvar).reshape(rows, nvar)
            arch_specs.append(spec)
            arch_state.append((head, count, window_index, window_fill,
                               acc, acc_known, windows, data))
        if off != len(payload):
            raise CorruptFile(f"{len(payload) - off} trailing bytes")

        rrd = cls(RrdSpec(step=step, variables=tuple(names), archives=tuple(arch_specs)))
        rrd._pdp_bin = pdp_bin
        rrd._last_update = last_update
        rrd._pending = pending
        rrd._last_value = last_value
        rrd._last_time = last_time
        for arc, (head, count, window_index, window_fill,
                  acc, acc_known, windows, data) in zip(rrd.archives, arch_state):
            arc.head = head
            arc.count = count
            arc.window_index = window_index
            arc.window_fill = window_fill
            arc.acc = acc
            arc.acc_known = acc_known
            arc.windows = windows
            arc.data = data
        return rrd

    def save(self, path: str) -> None:
        """Atomic write: the file is either the old state or the new one."""
        blob = self.to_bytes()
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "Rrd":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def dump_text(rrd: Rrd) -> str:
    """Human-readable dump of a database: header, pending bin, every row."""
    lines = [
        f"step {rrd.spec.step:g}",
        "variables " + " ".join(rrd.spec.variables),
        f"last_update {rrd._last_update:.6f}" if not math.isnan(rrd._last_update)
        else "last_update never",
    ]
    if rrd._pdp_bin != -1:
        pend = " ".join(
            f"{name}={_fmt(rrd._pending[i])}" for i, name in enumerate(rrd.spec.variables))
        lines.append(f"pending bin {rrd._pdp_bin} {pend}")
    for n, arc in enumerate(rrd.archives):
        lines.append(
            f"archive {n} cf {arc.spec.cf.value} xff {arc.spec.xff:g} "
            f"granularity {arc.spec.granularity:g} expire {arc.spec.expire:g} "
            f"rows {arc.rows} stored {arc.count}")
        for end_time, row in arc.iter_rows():
            cells = " ".join(_fmt(v) for v in row)
            lines.append(f"  {end_time:.0f} {cells}".rstrip())
    return "\n".join(lines) + "\n"


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"
