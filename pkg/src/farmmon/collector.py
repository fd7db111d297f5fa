"""Parallel SNMP polling: scheduling, exchanges, value processing.

One control loop multiplexes every outstanding UDP exchange. A host's poll
packs all its variables into one GetRequest per community string; request
ids match responses to requests and are reused across retransmits so a late
first answer still counts. Polls are scheduled at a fixed rate anchored to
the collector's start: a missed slot is skipped, never allowed to bunch up.
At most `num_connections` hosts are in flight at once; when the cap is
reached, due polls wait in earliest-deadline order.

The loop is the sole writer of per-variable state, the status view, and the
archives, so no locking beyond the status view's own snapshot lock exists.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import selectors
import socket
import time
from dataclasses import dataclass

from . import snmp
from .config import HostConfig, MibKind, MonitorConfig
from .rrd import Rrd, RrdError
from .status import PollOutcome, StatusView

log = logging.getLogger("farmmon.collector")

DEFAULT_TIMEOUT = 5.0
DEFAULT_RETRIES = 1
SNMP_PORT = 161

_request_ids = itertools.count(1)


def _next_request_id() -> int:
    return next(_request_ids) % 0x7FFFFFFF + 1


@dataclass(frozen=True)
class Ok:
    raw: int


@dataclass(frozen=True)
class VarError:
    message: str


@dataclass(frozen=True)
class PollResult:
    host: str
    time: float
    outcome: PollOutcome
    values: dict          # mib id -> Ok | VarError; empty on Timeout

    @property
    def var_errors(self):
        return tuple((mib_id, v.message) for mib_id, v in self.values.items()
                     if isinstance(v, VarError))


@dataclass(frozen=True)
class VarState:
    last_raw: int | None = None
    last_time: float | None = None
    last_processed: float | None = None


def process_value(spec, raw: int, state: VarState, now: float):
    """Turn a raw sample into a processed value per the variable's type.

    Returns (value-or-None, new state). GAUGE is the identity; COUNTER is a
    wrap-corrected rate (2^32 unless the previous sample needed 64 bits);
    DERIVE is a signed difference quotient. The first sample of a rate type
    is unknown, as is any result outside the configured [min, max].
    """
    value: float | None
    if spec.kind == MibKind.GAUGE:
        value = float(raw)
    elif state.last_raw is None or state.last_time is None:
        value = None
    else:
        dt = now - state.last_time
        if dt <= 0:
            value = None
        elif spec.kind == MibKind.COUNTER:
            if raw >= state.last_raw:
                delta = raw - state.last_raw
            else:
                modulus = 2 ** 64 if state.last_raw >= 2 ** 32 else 2 ** 32
                delta = modulus - state.last_raw + raw
            value = delta / dt
        else:   # DERIVE
            value = (raw - state.last_raw) / dt
    if value is not None:
        if spec.min is not None and value < spec.min:
            value = None
        elif spec.max is not None and value > spec.max:
            value = None
    return value, VarState(last_raw=raw, last_time=now, last_processed=value)


class _Group:
    """One GetRequest datagram: the variables sharing a community string."""

    def __init__(self, version, community: str, items, timeout: float, retries: int):
        self.items = items                     # [(MibSpec, Oid)]
        self.request_id = _next_request_id()
        self.blob = snmp.encode_get_request(
            version, community.encode("utf-8"), self.request_id,
            [oid for _, oid in items])
        self.timeout = timeout
        self.attempts_left = retries           # retransmits remaining
        self.deadline = math.inf
        self.response: snmp.SnmpMessage | None = None
        self.exhausted = False

    @property
    def open(self) -> bool:
        return self.response is None and not self.exhausted


class _Exchange:
    """All in-flight requests of one host poll, on one connected socket."""

    def __init__(self, host: HostConfig, now: float, *, timeout: float,
                 retries: int, stats: dict):
        self.host = host
        self.stats = stats
        groups: dict = {}
        for mib in host.mibs:
            groups.setdefault(mib.community, []).append(
                (mib, snmp.parse_oid(mib.name)))
        self.groups = [
            _Group(host.snmp_version, community, items, timeout, retries)
            for community, items in groups.items()
        ]
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.setblocking(False)
        self.sock.connect(host.address(SNMP_PORT))
        for group in self.groups:
            self._send(group, now)

    def _send(self, group: _Group, now: float) -> None:
        try:
            self.sock.send(group.blob)
            self.stats["requests_sent"] += 1
        except OSError:
            self.stats["send_errors"] += 1
        group.deadline = now + group.timeout

    def on_readable(self, now: float) -> bool:
        while True:
            try:
                data = self.sock.recv(snmp.MAX_DATAGRAM)
            except (BlockingIOError, InterruptedError):
                break
            except OSError:
                break   # e.g. a port-unreachable kick on a connected socket
            try:
                msg = snmp.decode_message(data)
            except snmp.SnmpError:
                self.stats["malformed_datagrams"] += 1
                continue
            for group in self.groups:
                if group.open and msg.request_id == group.request_id \
                        and msg.pdu_type == snmp.PduType.RESPONSE:
                    group.response = msg
                    self.stats["responses_matched"] += 1
                    break
            else:
                self.stats["unknown_request_id"] += 1
        return self.done

    def on_timer(self, now: float) -> bool:
        for group in self.groups:
            if group.open and now >= group.deadline:
                if group.attempts_left > 0:
                    group.attempts_left -= 1
                    self.stats["retransmits"] += 1
                    self._send(group, now)
                else:
                    group.exhausted = True
        return self.done

    @property
    def done(self) -> bool:
        return all(not group.open for group in self.groups)

    def next_deadline(self) -> float:
        open_groups = [g.deadline for g in self.groups if g.open]
        return min(open_groups) if open_groups else math.inf

    def close(self) -> None:
        self.sock.close()

    def build_result(self, now: float) -> PollResult:
        if all(group.response is None for group in self.groups):
            return PollResult(host=self.host.name, time=now,
                              outcome=PollOutcome.TIMEOUT, values={})
        values: dict = {}
        for group in self.groups:
            msg = group.response
            if msg is None:
                continue   # this community went unanswered: its vars stay unknown
            error_oids = {}
            if msg.error_status != 0:
                name = snmp.ERROR_STATUS_NAMES.get(msg.error_status,
                                                   f"error {msg.error_status}")
                if 1 <= msg.error_index <= len(msg.varbinds):
                    error_oids[msg.varbinds[msg.error_index - 1].oid] = name
                else:
                    error_oids = {vb.oid: name for vb in msg.varbinds}
            by_oid = {}
            for vb in msg.varbinds:
                by_oid.setdefault(vb.oid, vb.value)
            for mib, oid in group.items:
                if oid in error_oids:
                    values[mib.id] = VarError(f"{mib.id}: {error_oids[oid]}")
                    continue
                value = by_oid.get(oid)
                if value is None or isinstance(value, snmp.Null):
                    continue   # unanswered variable: unknown, not an error
                if isinstance(value, snmp.NoSuchObject):
                    values[mib.id] = VarError(f"{mib.id}: noSuchObject")
                elif isinstance(value, snmp.NoSuchInstance):
                    values[mib.id] = VarError(f"{mib.id}: noSuchInstance")
                elif isinstance(value, snmp.EndOfMibView):
                    values[mib.id] = VarError(f"{mib.id}: endOfMibView")
                elif isinstance(value, snmp.UNSIGNED_VALUE_TYPES) or \
                        isinstance(value, snmp.Integer):
                    values[mib.id] = Ok(value.value)
                else:
                    values[mib.id] = VarError(
                        f"{mib.id}: bad value type {type(value).__name__}")
        return PollResult(host=self.host.name, time=now,
                          outcome=PollOutcome.RESPONDED, values=values)


def poll_host(host: HostConfig, *, timeout: float = DEFAULT_TIMEOUT,
              retries: int = DEFAULT_RETRIES, clock=time.time) -> PollResult:
    """Poll one host synchronously and return its result."""
    stats = _new_stats()
    now = clock()
    exchange = _Exchange(host, now, timeout=timeout, retries=retries, stats=stats)
    sel = selectors.DefaultSelector()
    sel.register(exchange.sock, selectors.EVENT_READ)
    try:
        while not exchange.done:
            wait = max(0.0, min(exchange.next_deadline() - clock(), 0.5))
            ready = sel.select(wait)
            now = clock()
            if ready:
                exchange.on_readable(now)
            exchange.on_timer(now)
        return exchange.build_result(clock())
    finally:
        sel.close()
        exchange.close()


def _new_stats() -> dict:
    return {
        "polls_started": 0,
        "responded": 0,
        "timeouts": 0,
        "requests_sent": 0,
        "retransmits": 0,
        "responses_matched": 0,
        "unknown_request_id": 0,
        "malformed_datagrams": 0,
        "send_errors": 0,
        "stale_updates": 0,
    }


class Collector:
    """The polling loop over every configured host."""

    def __init__(self, config: MonitorConfig, view: StatusView, rrds: dict, *,
                 timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES,
                 clock=time.time, event_hook=None):
        if timeout <= 0:
            raise ValueError(f"timeout must be positive, got {timeout}")
        if retries < 0:
            raise ValueError(f"retries must be >= 0, got {retries}")
        self.config = config
        self.view = view
        self.rrds = rrds
        self.timeout = timeout
        self.retries = retries
        self.clock = clock
        self.hook = event_hook or (lambda kind, **info: None)
        self.stats = _new_stats()
        self._var_state: dict = {}     # (host, mib id) -> VarState
        self._seq = itertools.count()

    def run(self, stop_event) -> None:
        """Poll until stop_event is set; returns after draining in-flight polls."""
        sel = selectors.DefaultSelector()
        now = self.clock()
        due: list = []
        for host in self.config.hosts:
            if host.mibs:
                heapq.heappush(due, (now, next(self._seq), host.name))
            else:
                log.debug("host %s has no variables, never polled", host.name)
        in_flight: dict = {}
        cap = self.config.num_connections

        def start_due(now: float) -> None:
            while due and due[0][0] <= now and len(in_flight) < cap:
                slot, _, name = heapq.heappop(due)
                if name in in_flight:
                    # still polling the previous slot: skip this one entirely
                    host = self.config.host_by_name(name)
                    heapq.heappush(due, (_next_slot(slot, host.polldelay, now),
                                         next(self._seq), name))
                    continue
                host = self.config.host_by_name(name)
                try:
                    exchange = _Exchange(host, now, timeout=self.timeout,
                                         retries=self.retries, stats=self.stats)
                except OSError as exc:
                    log.warning("cannot start poll of %s: %s", name, exc)
                    heapq.heappush(due, (_next_slot(slot, host.polldelay, now),
                                         next(self._seq), name))
                    continue
                in_flight[name] = (exchange, slot)
                sel.register(exchange.sock, selectors.EVENT_READ, exchange)
                self.stats["polls_started"] += 1
                self.hook("start", host=name, due=slot, now=now,
                          in_flight=len(in_flight))

        def finish(name: str, now: float) -> None:
            exchange, slot = in_flight.pop(name)
            sel.unregister(exchange.sock)
            result = exchange.build_result(now)
            exchange.close()
            self._apply(result)
            host = self.config.host_by_name(name)
            heapq.heappush(due, (_next_slot(slot, host.polldelay, now),
                                 next(self._seq), name))
            self.hook("finish", host=name, due=slot, now=now,
                      outcome=result.outcome.value, in_flight=len(in_flight))

        while True:
            now = self.clock()
            if stop_event.is_set():
                break
            start_due(now)
            horizon = min(
                min((ex.next_deadline() for ex, _ in in_flight.values()),
                    default=math.inf),
                due[0][0] if due and len(in_flight) < cap else math.inf,
            )
            wait = min(max(horizon - self.clock(), 0.0), 0.5)
            ready = sel.select(wait)
            now = self.clock()
            finished = []
            for key, _ in ready:
                exchange = key.data
                if exchange.on_readable(now):
                    finished.append(exchange.host.name)
            for name, (exchange, _) in list(in_flight.items()):
                if name not in finished and exchange.on_timer(now):
                    finished.append(name)
            for name in finished:
                if name in in_flight:
                    finish(name, now)
        # drain: anything still in flight resolves as-is right now
        for name in list(in_flight):
            exchange, slot = in_flight.pop(name)
            sel.unregister(exchange.sock)
            exchange.on_readable(self.clock())
            result = exchange.build_result(self.clock())
            exchange.close()
            self._apply(result)
        sel.close()

    def _apply(self, result: PollResult) -> None:
        if result.outcome == PollOutcome.RESPONDED:
            self.stats["responded"] += 1
        else:
            self.stats["timeouts"] += 1
            log.info("host %s timed out", result.host)
        host = self.config.host_by_name(result.host)
        processed: dict = {}
        for mib in host.mibs:
            tagged = result.values.get(mib.id)
            if isinstance(tagged, Ok):
                state = self._var_state.get((host.name, mib.id), VarState())
                value, new_state = process_value(mib, tagged.raw, state, result.time)
                self._var_state[(host.name, mib.id)] = new_state
                processed[mib.id] = value
            else:
                processed[mib.id] = None
        self.view.apply_poll_result(result, processed)
        rrd = self.rrds.get(result.host)
        if rrd is not None:
            try:
                rrd.update(result.time, processed)
            except RrdError as exc:
                self.stats["stale_updates"] += 1
                log.warning("archive update for %s dropped: %s", result.host, exc)
        self.hook("apply", host=result.host, outcome=result.outcome.value,
                  time=result.time)


def _next_slot(slot: float, polldelay: float, now: float) -> float:
    """The next fixed-rate slot strictly after `slot`, skipping missed ones."""
    nxt = slot + polldelay
    if nxt > now:
        return nxt
    k = math.ceil((now - slot) / polldelay)
    nxt = slot + k * polldelay
    if nxt <= now:
        nxt += polldelay
    return nxt
