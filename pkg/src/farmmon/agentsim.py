"""Scriptable simulated SNMP agents.

Each agent binds a UDP socket and answers GetRequest datagrams with values
produced by per-variable generator functions running on a deterministic,
seeded clock. Hundreds of agents share one selector loop thread, so a farm
the size of a real cluster fits in a single test process. Faults (silence,
random drops, per-OID errors) can be injected at any time.
"""

from __future__ import annotations

import math
import random
import selectors
import socket
import threading
import time
from dataclasses import dataclass, field

from . import config as config_mod
from . import snmp
from .rrd import ConsFunc


class BindFailure(OSError):
    pass


# -- generators ------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    value: float

    def sample(self, t: float) -> float:
        return self.value


@dataclass(frozen=True)
class Ramp:
    rate: float   # units per second, from zero at t=0

    def sample(self, t: float) -> float:
        return self.rate * t


@dataclass(frozen=True)
class Sine:
    mean: float
    amplitude: float
    period: float   # seconds

    def sample(self, t: float) -> float:
        return self.mean + self.amplitude * math.sin(2.0 * math.pi * t / self.period)


@dataclass(frozen=True)
class Counter:
    """A free-running counter: v(t) = floor(rate * t) mod 2^width."""
    rate: float
    width: int = 32

    def __post_init__(self):
        if self.width not in (32, 64):
            raise ValueError(f"width must be 32 or 64, got {self.width}")

    def sample(self, t: float) -> float:
        return math.floor(self.rate * t) % (2 ** self.width)


@dataclass(frozen=True)
class Fault:
    drop_probability: float = 0.0
    silent: bool = False
    error_oids: frozenset = frozenset()   # answered as missing

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError(f"drop_probability {self.drop_probability} outside [0, 1]")


@dataclass(frozen=True)
class VarSpec:
    id: str          # mib id used in generated monitor configs
    oid: str         # dotted or symbolic object name
    generator: object
    kind: str = "GAUGE"   # GAUGE / COUNTER / DERIVE, for generated configs


@dataclass(frozen=True)
class AgentScript:
    port: int = 0                  # 0 = ephemeral
    community: str = "public"
    variables: tuple = ()          # VarSpecs
    faults: Fault = field(default_factory=Fault)


def default_variable_set() -> tuple:
    """A 25-variable set shaped like a worked Linux node: disk and network
    counters, memory gauges, and load averages scaled by 100."""
    out = []
    for disk in range(1, 6):
        out.append(VarSpec(f"diskRead{disk}", f".1.3.6.1.4.1.2021.13.15.1.1.5.{disk}",
                           Counter(rate=1500.0 + 400.0 * disk, width=32), "COUNTER"))
    for disk in range(1, 6):
        out.append(VarSpec(f"diskWrite{disk}", f".1.3.6.1.4.1.2021.13.15.1.1.6.{disk}",
                           Counter(rate=900.0 + 250.0 * disk, width=32), "COUNTER"))
    for ifn in range(2, 6):
        out.append(VarSpec(f"net{ifn}In", f".1.3.6.1.2.1.2.2.1.10.{ifn}",
                           Counter(rate=45000.0 + 9000.0 * ifn, width=32), "COUNTER"))
    for ifn in range(2, 6):
        out.append(VarSpec(f"net{ifn}Out", f".1.3.6.1.2.1.2.2.1.16.{ifn}",
                           Counter(rate=30000.0 + 7000.0 * ifn, width=32), "COUNTER"))
    out.append(VarSpec("memTotal", ".1.3.6.1.4.1.2021.4.5.0", Constant(513528.0)))
    out.append(VarSpec("memAvail", ".1.3.6.1.4.1.2021.4.6.0",
                       Sine(mean=262144.0, amplitude=90000.0, period=1800.0)))
    out.append(VarSpec("memBuffer", ".1.3.6.1.4.1.2021.4.14.0",
                       Sine(mean=14600.0, amplitude=3000.0, period=3600.0)))
    out.append(VarSpec("memCached", ".1.3.6.1.4.1.2021.4.15.0",
                       Sine(mean=35376.0, amplitude=8000.0, period=2700.0)))
    for n, idx in (("load1", 1), ("load5", 2), ("load15", 3)):
        out.append(VarSpec(n, f".1.3.6.1.4.1.2021.10.1.5.{idx}",
                           Sine(mean=120.0, amplitude=80.0, period=900.0 * idx)))
    return tuple(out)


# -- the shared selector loop ----------------------------------------------

class _SelectorLoop(threading.Thread):
    """One thread multiplexing every agent socket registered with it."""

    def __init__(self):
        super().__init__(name="agent-loop", daemon=True)
        self._sel = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._sel.register(self._wake_r, selectors.EVENT_READ, None)
        self._lock = threading.Lock()
        self._pending = []       # (sock, callback) to register
        self._closing = []       # socks to unregister and close
        self._stopped = False

    def add(self, sock: socket.socket, callback) -> None:
        with self._lock:
            self._pending.append((sock, callback))
        self._wake()

    def remove(self, sock: socket.socket) -> None:
        with self._lock:
            self._closing.append(sock)
        self._wake()

    def stop(self) -> None:
        with self._lock:
            self._stopped = True
        self._wake()
        if self.is_alive():
            self.join(timeout=5)

    def _wake(self) -> None:
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass

    def run(self) -> None:
        while True:
            with self._lock:
                if self._stopped:
                    break
                for sock, callback in self._pending:
                    self._sel.register(sock, selectors.EVENT_READ, callback)
                self._pending.clear()
                for sock in self._closing:
                    try:
                        self._sel.unregister(sock)
                    except KeyError:
                        pass
                    sock.close()
                self._closing.clear()
            for key, _ in self._sel.select(timeout=0.5):
                if key.fileobj is self._wake_r:
                    try:
                        while self._wake_r.recv(4096):
                            pass
                    except BlockingIOError:
                        pass
                    continue
                key.data(key.fileobj)
        for key in list(self._sel.get_map().values()):
            try:
                self._sel.unregister(key.fileobj)
            except KeyError:
                pass
            if key.fileobj is not self._wake_r:
                key.fileobj.close()
        self._wake_r.close()
        self._wake_w.close()


# -- agents ------------------------------------------------------------------

class AgentHandle:
    """One running agent: its socket, counters, and fault control."""

    def __init__(self, script: AgentScript, seed: int, loop: _SelectorLoop,
                 sock: socket.socket, wall_clock: bool, clock=None):
        self.script = script
        self.port = sock.getsockname()[1]
        self.address = sock.getsockname()[:2]
        self._sock = sock
        self._loop = loop
        self._lock = threading.Lock()
        self._fault = Fault()
        self.inject_fault(script.faults)   # normalizes textual error oids
        self._drop_rng = random.Random(seed ^ 0x5DEECE66D)
        rng = random.Random(seed)
        self._phase = rng.uniform(0.0, 86400.0)
        self._t0 = time.monotonic()
        self._wall = wall_clock
        self._clock = clock
        self._vars = {}
        for spec in script.variables:
            self._vars[snmp.parse_oid(spec.oid)] = spec.generator
        self.requests_received = 0
        self.responses_sent = 0
        self.request_sizes = []
        self.response_sizes = []
        self._stopped = False

    def now(self) -> float:
        if self._clock is not None:
            return self._clock()
        if self._wall:
            return time.time()
        return (time.monotonic() - self._t0) + self._phase

    def inject_fault(self, fault: Fault) -> None:
        normalized = Fault(
            drop_probability=fault.drop_probability,
            silent=fault.silent,
            error_oids=frozenset(
                oid if isinstance(oid, snmp.Oid) else snmp.parse_oid(str(oid))
                for oid in fault.error_oids),
        )
        with self._lock:
            self._fault = normalized

    def stop(self) -> None:
        if not self._stopped:
            self._stopped = True
            self._loop.remove(self._sock)

    # runs on the loop thread
    def _on_readable(self, sock: socket.socket) -> None:
        if self._stopped:
            # unregistration is asynchronous; drop datagrams that race it
            return
        try:
            data, peer = sock.recvfrom(snmp.MAX_DATAGRAM)
        except OSError:
            return
        self.requests_received += 1
        self.request_sizes.append(len(data))
        with self._lock:
            fault = self._fault
        if fault.silent:
            return
        if fault.drop_probability and self._drop_rng.random() < fault.drop_probability:
            return
        try:
            msg = snmp.decode_message(data)
        except snmp.SnmpError:
            return
        if msg.community != self.script.community.encode("utf-8"):
            return   # wrong community: no answer at all
        if msg.pdu_type != snmp.PduType.GET_REQUEST:
            return
        reply = self._answer(msg, fault)
        if reply is None:
            return
        try:
            blob = snmp.encode_message(reply)
        except snmp.SnmpError:
            return
        try:
            sock.sendto(blob, peer)
        except OSError:
            return
        self.responses_sent += 1
        self.response_sizes.append(len(blob))

    def _answer(self, msg: snmp.SnmpMessage, fault: Fault) -> snmp.SnmpMessage | None:
        t = self.now()
        values = []
        missing = []
        for i, vb in enumerate(msg.varbinds):
            gen = None if vb.oid in fault.error_oids else self._vars.get(vb.oid)
            if gen is None:
                missing.append(i)
                values.append(None)
            else:
                values.append(self._sample_value(gen, t))
        if msg.version == snmp.SnmpVersion.V1 and missing:
            # answer with noSuchName naming the first bad varbind; resolvable
            # siblings still carry real values so the poller can use them
            varbinds = tuple(
                snmp.VarBind(vb.oid, values[i] if values[i] is not None else snmp.Null())
                for i, vb in enumerate(msg.varbinds))
            return snmp.SnmpMessage(
                version=msg.version, community=msg.community,
                pdu_type=snmp.PduType.RESPONSE, request_id=msg.request_id,
                error_status=2, error_index=missing[0] + 1, varbinds=varbinds)
        varbinds = tuple(
            snmp.VarBind(vb.oid,
                         values[i] if values[i] is not None else snmp.NoSuchObject())
            for i, vb in enumerate(msg.varbinds))
        return snmp.SnmpMessage(
            version=msg.version, community=msg.community,
            pdu_type=snmp.PduType.RESPONSE, request_id=msg.request_id,
            error_status=0, error_index=0, varbinds=varbinds)

    @staticmethod
    def _sample_value(gen, t: float):
        raw = gen.sample(t)
        if isinstance(gen, Counter):
            if gen.width == 64:
                return snmp.Counter64(int(raw) % 2 ** 64)
            return snmp.Counter32(int(raw) % 2 ** 32)
        clamped = min(max(int(round(raw)), 0), 2 ** 32 - 1)
        return snmp.Gauge32(clamped)


def start_agent(script: AgentScript, seed: int, *, loop: _SelectorLoop | None = None,
                host: str = "127.0.0.1", wall_clock: bool = False,
                clock=None) -> AgentHandle:
    """Bind and arm one agent; a private loop thread is created when needed."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind((host, script.port))
    except OSError as exc:
        sock.close()
        raise BindFailure(f"cannot bind UDP {host}:{script.port}: {exc}") from None
    sock.setblocking(False)
    own_loop = loop is None
    if own_loop:
        loop = _SelectorLoop()
        loop.start()
    handle = AgentHandle(script, seed, loop, sock, wall_clock, clock)
    handle._own_loop = own_loop
    loop.add(sock, handle._on_readable)
    return handle


class Farm:
    """Many agents on one loop, plus the monitor config that points at them."""

    def __init__(self, agents: list, loop: _SelectorLoop, template: AgentScript):
        self.agents = agents
        self._loop = loop
        self._template = template

    def __len__(self):
        return len(self.agents)

    def stop(self) -> None:
        for agent in self.agents:
            agent._stopped = True
        self._loop.stop()

    def total_request_bytes(self) -> int:
        return sum(sum(a.request_sizes) for a in self.agents)

    def total_response_bytes(self) -> int:
        return sum(sum(a.response_sizes) for a in self.agents)

    def monitor_config(self, *, polldelay: float = 30.0, snmp_version: str = "2c",
                       rrd_dir: str = ".", html_dir: str = ".", xslt_dir: str = ".",
                       http_port: int = 8001, num_connections: int = 50,
                       archives: tuple | None = None) -> config_mod.MonitorConfig:
        """A ready-to-run MonitorConfig with one host entry per agent."""
        if archives is None:
            archives = (
                config_mod.RraSpec(cf=ConsFunc.AVERAGE, xff=0.5,
                                   granularity=polldelay, expire=polldelay * 2880),
                config_mod.RraSpec(cf=ConsFunc.MAX, xff=0.5,
                                   granularity=polldelay * 2, expire=polldelay * 5760),
            )
        mibs = tuple(
            config_mod.MibSpec(id=v.id, name=v.oid,
                               kind=config_mod.MibKind(v.kind),
                               community=self._template.community)
            for v in self._template.variables)
        graph_body = None
        for v in self._template.variables:
            if v.kind == "GAUGE":
                graph_body = (f"DEF:v={v.id}:AVERAGE", "LINE1:v#0000CC:" + v.id)
                break
        hosts = []
        for i, agent in enumerate(self.agents):
            graphs = ()
            if graph_body:
                graphs = (config_mod.GraphSpec(
                    id="hourly.png", title="Hourly data", width=400, height=180,
                    seconds="-3h", body=graph_body),)
            hosts.append(config_mod.HostConfig(
                name=f"sim{i:04d}",
                ip=f"127.0.0.1:{agent.port}",
                polldelay=polldelay,
                tags=("farm1", "client"),
                snmp_version=(snmp.SnmpVersion.V1 if snmp_version == "1"
                              else snmp.SnmpVersion.V2C),
                mibs=mibs,
                rras=archives,
                graphs=graphs,
            ))
        return config_mod.MonitorConfig(
            hosts=tuple(hosts), num_connections=num_connections,
            rrd_dir=rrd_dir, xslt_dir=xslt_dir, html_dir=html_dir,
            http_port=http_port)


def spawn_farm(n: int, template: AgentScript, seed: int, *,
               host: str = "127.0.0.1", wall_clock: bool = False) -> Farm:
    """Start n agents with derived per-agent seeds on one selector loop."""
    if n < 1:
        raise ValueError(f"need at least one agent, got {n}")
    loop = _SelectorLoop()
    agents = []
    try:
        for i in range(n):
            script = AgentScript(port=0, community=template.community,
                                 variables=template.variables, faults=template.faults)
            agents.append(start_agent(script, seed * 100003 + i, loop=loop,
                                      host=host, wall_clock=wall_clock))
    except BindFailure:
        for agent in agents:
            agent.stop()
        loop.stop()
        raise
    loop.start()
    return Farm(agents, loop, template)


def inject_fault(handle: AgentHandle, fault: Fault) -> None:
    handle.inject_fault(fault)
