"""In-memory cluster view and its XML status document.

One writer (the poller) applies results; any number of readers take
snapshots. A snapshot is a deep, immutable copy assembled under the same
lock the writer holds, so a host entry never shows half of an update.
Serialization renders a snapshot as the status document: a `<hosts>` root
holding one `<host>` per configured machine with its last observed values,
its graph directory, and a bounded notification ring.
"""

from __future__ import annotations

import enum
import math
import threading
import time
from collections import deque
from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

from .config import HostConfig, MonitorConfig


class HostState(enum.Enum):
    UNKNOWN = "UNKNOWN"   # never polled
    OK = "OK"
    TIMEOUT = "TIMEOUT"


class PollOutcome(enum.Enum):
    RESPONDED = "RESPONDED"
    TIMEOUT = "TIMEOUT"


class Severity(enum.Enum):
    INFO = "INFO"
    WARNING = "WARNING"
    CRITICAL = "CRITICAL"


NOTIFICATION_RING = 100


class UnknownHost(KeyError):
    pass


@dataclass(frozen=True)
class Notification:
    ts: float
    severity: Severity
    message: str


@dataclass(frozen=True)
class HostStatus:
    name: str
    tags: tuple
    status: HostState
    last_values: dict           # mib id -> (value, lastUpdated seconds), config order
    graphs: tuple               # (graph id, title)
    notifications: tuple        # oldest first


@dataclass(frozen=True)
class ClusterStatus:
    hosts: tuple                # config order, one entry per configured host


class _HostSlot:
    def __init__(self, cfg: HostConfig):
        self.cfg = cfg
        self.state = HostState.UNKNOWN
        self.values: dict = {}                      # mib id -> (value, lastUpdated)
        self.notifications = deque(maxlen=NOTIFICATION_RING)


class StatusView:
    """The live view: single writer, snapshot-isolated readers."""

    def __init__(self, config: MonitorConfig):
        self._lock = threading.Lock()
        self._slots = {host.name: _HostSlot(host) for host in config.hosts}
        self._order = [host.name for host in config.hosts]

    def apply_poll_result(self, result, processed: dict) -> None:
        """Fold one poll into the view.

        `result` carries host, outcome, time and var_errors; `processed`
        maps mib id to the processed value or None for unknown. A timeout
        keeps the previous values on display with their old stamps.
        """
        with self._lock:
            slot = self._slots.get(result.host)
            if slot is None:
                raise UnknownHost(result.host)
            if result.outcome == PollOutcome.RESPONDED:
                slot.state = HostState.OK
                for mib_id, value in processed.items():
                    if value is not None:
                        slot.values[mib_id] = (float(value), int(result.time))
            else:
                slot.state = HostState.TIMEOUT
                slot.notifications.append(
                    Notification(ts=result.time, severity=Severity.CRITICAL,
                                 message="Timeout"))
            for _mib_id, text in getattr(result, "var_errors", ()):
                slot.notifications.append(
                    Notification(ts=result.time, severity=Severity.WARNING,
                                 message=text))

    def snapshot(self) -> ClusterStatus:
        with self._lock:
            hosts = []
            for name in self._order:
                slot = self._slots[name]
                ordered = {m.id: slot.values[m.id] for m in slot.cfg.mibs
                           if m.id in slot.values}
                hosts.append(HostStatus(
                    name=name,
                    tags=slot.cfg.tags,
                    status=slot.state,
                    last_values=ordered,
                    graphs=tuple((g.id, g.title) for g in slot.cfg.graphs),
                    notifications=tuple(slot.notifications),
                ))
            return ClusterStatus(hosts=tuple(hosts))

    def snapshot_host(self, name: str) -> HostStatus:
        snap = self.snapshot()
        for host in snap.hosts:
            if host.name == name:
                return host
        raise UnknownHost(name)


def format_ts(ts: float) -> str:
    """`<epoch>.<usec> <HH:MM:SS>.<usec>` with six fractional digits twice."""
    sec = int(math.floor(ts))
    usec = int(round((ts - sec) * 1e6))
    if usec >= 1000000:
        sec += 1
        usec -= 1000000
    hms = time.strftime("%H:%M:%S", time.localtime(sec))
    return f"{sec}.{usec:06d} {hms}.{usec:06d}"


def serialize_status_xml(status) -> str:
    """Render a ClusterStatus or a single HostStatus as the status document."""
    hosts = status.hosts if isinstance(status, ClusterStatus) else (status,)
    out = ["<hosts>"] if hosts else ["<hosts/>"]
    for host in hosts:
        attrs = [f"name={quoteattr(host.name)}"]
        if host.tags:
            attrs.append(f"tag={quoteattr(','.join(host.tags))}")
        attrs.append(f"status={quoteattr(host.status.value)}")
        out.append(f"  <host {' '.join(attrs)}>")
        if host.last_values:
            out.append("    <mibs>")
            for mib_id, (value, last_updated) in host.last_values.items():
                out.append(
                    f"      <mib id={quoteattr(mib_id)} "
                    f"lastUpdated={quoteattr(str(int(last_updated)))}>"
                    f"{value:.6f}</mib>")
            out.append("    </mibs>")
        else:
            out.append("    <mibs/>")
        if host.graphs:
            out.append("    <graphs>")
            for graph_id, title in host.graphs:
                out.append(f"      <graph id={quoteattr(graph_id)} "
                           f"title={quoteattr(title)}/>")
            out.append("    </graphs>")
        else:
            out.append("    <graphs/>")
        if host.notifications:
            out.append("    <notifications>")
            for note in host.notifications:
                out.append(
                    f"      <msg ts={quoteattr(format_ts(note.ts))} "
                    f"severity={quoteattr(note.severity.value)}>"
                    f"{escape(note.message)}</msg>")
            out.append("    </notifications>")
        else:
            out.append("    <notifications/>")
        out.append("  </host>")
    if hosts:
        out.append("</hosts>")
    return "\n".join(out) + "\n"
