"""Monitor configuration: XML parsing, structural validation, defaults.

The accepted document shape is fixed (a `monitor` root holding `host`
blocks) and validated in-process: element order, required attributes and
enumerations are all checked here, and every omitted optional attribute is
replaced by its documented default. A parsed MonitorConfig is immutable.
"""

from __future__ import annotations

import enum
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from xml.sax.saxutils import escape, quoteattr

from . import grapher
from . import snmp
from .rrd import ConsFunc
from .snmp import SnmpVersion


class ConfigError(Exception):
    """Base class for configuration problems; `context` names the element."""

    def __init__(self, message: str, context: str = ""):
        self.context = context
        super().__init__(f"{context}: {message}" if context else message)


class WellFormednessError(ConfigError):
    """The document is not well-formed XML."""


class SchemaViolation(ConfigError):
    """Element order, required attribute, or enumerated value violated."""


class DuplicateId(ConfigError):
    """Host name, mib id, or graph id collision."""


class BadValue(ConfigError):
    """An attribute value is outside its documented domain."""


class MibKind(enum.Enum):
    GAUGE = "GAUGE"
    DERIVE = "DERIVE"
    COUNTER = "COUNTER"


@dataclass(frozen=True)
class MibSpec:
    id: str
    name: str
    kind: MibKind = MibKind.GAUGE
    community: str = "public"
    min: float | None = None
    max: float | None = None


@dataclass(frozen=True)
class RraSpec:
    cf: ConsFunc = ConsFunc.AVERAGE
    xff: float = 0.8
    granularity: float = 0.0
    expire: float = 0.0


@dataclass(frozen=True)
class GraphSpec:
    id: str
    title: str
    width: int = 400
    height: int = 180
    seconds: str = "-3h"
    body: tuple = ()


@dataclass(frozen=True)
class HostConfig:
    name: str
    ip: str
    polldelay: float
    tags: tuple = ()
    snmp_version: SnmpVersion = SnmpVersion.V2C
    description: str | None = None
    mailto: str | None = None  # parsed, never acted on
    mibs: tuple = ()
    rras: tuple = ()
    graphs: tuple = ()

    def address(self, default_port: int = 161) -> tuple[str, int]:
        """Agent endpoint; the ip attribute may carry an explicit ``:port``."""
        if ":" in self.ip:
            addr, port = self.ip.rsplit(":", 1)
            return addr, int(port)
        return self.ip, default_port

    def mib_by_id(self, mib_id: str) -> MibSpec | None:
        for mib in self.mibs:
            if mib.id == mib_id:
                return mib
        return None

    def graph_by_id(self, graph_id: str) -> GraphSpec | None:
        for graph in self.graphs:
            if graph.id == graph_id:
                return graph
        return None


@dataclass(frozen=True)
class MonitorConfig:
    hosts: tuple = ()
    num_connections: int = 50
    pmc_logfile: str | None = None
    verbosity: int = 3
    rrd_dir: str = "."
    xslt_dir: str = "."
    html_dir: str = "."
    http_port: int = 8001
    http_logfile: str | None = None
    http_filter: str | None = None
    http_filter_extensions: tuple = ()

    def host_by_name(self, name: str) -> HostConfig | None:
        for host in self.hosts:
            if host.name == name:
                return host
        return None


_MONITOR_ATTRS = {
    "pmc-num-connections", "pmc-logfile", "pmc-verbosity", "pmc-rrd-dir",
    "pmc-xslt-dir", "http-html-dir", "http-port", "http-logfile",
    "http-filter", "http-filter-extensions",
}
_HOST_ATTRS = {"name", "ip", "polldelay", "tag", "snmpversion"}
_MIB_ATTRS = {"id", "name", "type", "community", "min", "max"}
_RRA_ATTRS = {"cf", "xff", "granularity", "expire"}
_GRAPH_ATTRS = {"id", "width", "height", "seconds", "title"}


def _check_attrs(elem: ET.Element, allowed: set, context: str) -> None:
    for attr in elem.attrib:
        if attr not in allowed:
            raise SchemaViolation(f"undeclared attribute {attr!r}", context)


def _no_stray_text(elem: ET.Element, context: str) -> None:
    if elem.text and elem.text.strip():
        raise SchemaViolation("unexpected text content", context)
    for child in elem:
        if child.tail and child.tail.strip():
            raise SchemaViolation("unexpected text content", context)


def _require(elem: ET.Element, attr: str, context: str) -> str:
    value = elem.get(attr)
    if value is None:
        raise SchemaViolation(f"missing required attribute {attr!r}", context)
    return value


def _parse_number(text: str, attr: str, context: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise BadValue(f"{attr} must be numeric, got {text!r}", context) from None


def _parse_int(text: str, attr: str, context: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise BadValue(f"{attr} must be an integer, got {text!r}", context) from None


def _split_tags(text: str) -> tuple:
    # both whitespace and commas separate tag tokens
    return tuple(tok for tok in text.replace(",", " ").split() if tok)


def _split_extensions(text: str) -> tuple:
    exts = []
    for tok in text.split():
        exts.append(tok if tok.startswith(".") else "." + tok)
    return tuple(exts)


def _parse_mib(elem: ET.Element, host_name: str) -> MibSpec:
    mib_id = _require(elem, "id", f"host {host_name!r} mib")
    context = f"host {host_name!r} mib {mib_id!r}"
    _check_attrs(elem, _MIB_ATTRS, context)
    if len(elem):
        raise SchemaViolation("mib must be empty", context)
    name = _require(elem, "name", context)
    try:
        snmp.parse_oid(name)
    except snmp.SnmpError as exc:
        raise BadValue(f"name is not a resolvable object identifier: {exc}",
                       context) from None
    type_text = elem.get("type", "GAUGE")
    try:
        kind = MibKind(type_text)
    except ValueError:
        raise SchemaViolation(f"type must be GAUGE, DERIVE or COUNTER, got {type_text!r}",
                              context) from None
    min_v = max_v = None
    if elem.get("min") is not None:
        min_v = _parse_number(elem.get("min"), "min", context)
    if elem.get("max") is not None:
        max_v = _parse_number(elem.get("max"), "max", context)
    if min_v is not None and max_v is not None and min_v > max_v:
        raise BadValue(f"min {min_v} exceeds max {max_v}", context)
    return MibSpec(id=mib_id, name=name, kind=kind,
                   community=elem.get("community", "public"), min=min_v, max=max_v)


def _parse_rra(elem: ET.Element, host_name: str, polldelay: float) -> RraSpec:
    context = f"host {host_name!r} rra"
    _check_attrs(elem, _RRA_ATTRS, context)
    cf_text = elem.get("cf", "AVERAGE")
    try:
        cf = ConsFunc(cf_text)
    except ValueError:
        raise SchemaViolation(f"cf must be AVERAGE, MIN, MAX or LAST, got {cf_text!r}",
                              context) from None
    xff = 0.8
    if elem.get("xff") is not None:
        xff = _parse_number(elem.get("xff"), "xff", context)
        if not 0.0 <= xff <= 1.0:
            raise BadValue(f"xff must be within [0, 1], got {xff}", context)
    granularity = _parse_number(_require(elem, "granularity", context), "granularity", context)
    expire = _parse_number(_require(elem, "expire", context), "expire", context)
    if granularity <= 0:
        raise BadValue(f"granularity must be positive, got {granularity}", context)
    if expire < granularity:
        raise BadValue(f"expire {expire} is below granularity {granularity}", context)
    steps = granularity / polldelay
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise SchemaViolation(
            f"granularity {granularity} is not a positive multiple of polldelay {polldelay}",
            context)
    return RraSpec(cf=cf, xff=xff, granularity=granularity, expire=expire)


def _parse_graph(elem: ET.Element, host: HostConfig) -> GraphSpec:
    graph_id = _require(elem, "id", f"host {host.name!r} rrdgraph")
    context = f"host {host.name!r} rrdgraph {graph_id!r}"
    _check_attrs(elem, _GRAPH_ATTRS, context)
    title = _require(elem, "title", context)
    width = 400
    height = 180
    if elem.get("width") is not None:
        width = _parse_int(elem.get("width"), "width", context)
    if elem.get("height") is not None:
        height = _parse_int(elem.get("height"), "height", context)
    if width <= 0 or height <= 0:
        raise BadValue(f"width and height must be positive, got {width}x{height}", context)
    seconds = elem.get("seconds", "-3h")
    lines = []
    for child in elem:
        if child.tag != "line":
            raise SchemaViolation(f"unexpected element <{child.tag}> in rrdgraph", context)
        if len(child):
            raise SchemaViolation("line may only contain text", context)
        lines.append((child.text or "").strip())
    if not lines:
        raise SchemaViolation("rrdgraph needs at least one line", context)

    # validate the instruction body now: fail at config time, not at render time
    try:
        program = grapher.parse_graph_script(lines)
    except grapher.GraphScriptError as exc:
        raise SchemaViolation(f"bad graph body: {exc}", context) from None
    mib_ids = {m.id for m in host.mibs}
    for vname, (mib_id, _cf) in program.defs.items():
        if mib_id not in mib_ids:
            raise BadValue(f"DEF {vname!r} references unknown mib {mib_id!r}", context)
    try:
        grapher.parse_at_time(seconds, now=0.0)
    except grapher.BadTimeSpec as exc:
        raise BadValue(f"bad seconds attribute: {exc}", context) from None
    return GraphSpec(id=graph_id, title=title, width=width, height=height,
                     seconds=seconds, body=tuple(lines))


def _parse_host(elem: ET.Element) -> HostConfig:
    name = _require(elem, "name", "host")
    context = f"host {name!r}"
    _check_attrs(elem, _HOST_ATTRS, context)
    _no_stray_text(elem, context)

    polldelay = _parse_number(_require(elem, "polldelay", context), "polldelay", context)
    if polldelay <= 0:
        raise BadValue(f"polldelay must be positive, got {polldelay}", context)
    version_text = elem.get("snmpversion", "2c")
    if version_text == "1":
        version = SnmpVersion.V1
    elif version_text == "2c":
        version = SnmpVersion.V2C
    else:
        raise SchemaViolation(f"snmpversion must be '1' or '2c', got {version_text!r}", context)

    # children come in the fixed order: description?, mailto?, miblist, archives, graphs
    children = list(elem)
    expected = ["description", "mailto", "miblist", "archives", "graphs"]
    optional = {"description", "mailto"}
    idx = 0
    slots: dict[str, ET.Element] = {}
    for child in children:
        while idx < len(expected) and expected[idx] != child.tag:
            if expected[idx] in optional:
                idx += 1
            else:
                raise SchemaViolation(
                    f"unexpected element <{child.tag}>, wanted <{expected[idx]}>", context)
        if idx >= len(expected):
            raise SchemaViolation(f"unexpected trailing element <{child.tag}>", context)
        slots[child.tag] = child
        idx += 1
    for required in ("miblist", "archives", "graphs"):
        if required not in slots:
            raise SchemaViolation(f"missing <{required}> element", context)

    description = slots["description"].text if "description" in slots else None
    mailto = slots["mailto"].text if "mailto" in slots else None

    mibs = []
    seen_mib_ids = set()
    _no_stray_text(slots["miblist"], context + " miblist")
    for child in slots["miblist"]:
        if child.tag != "mib":
            raise SchemaViolation(f"unexpected element <{child.tag}> in miblist", context)
        mib = _parse_mib(child, name)
        if mib.id in seen_mib_ids:
            raise DuplicateId(f"duplicate mib id {mib.id!r}", context)
        seen_mib_ids.add(mib.id)
        mibs.append(mib)

    rras = []
    _no_stray_text(slots["archives"], context + " archives")
    for child in slots["archives"]:
        if child.tag != "rra":
            raise SchemaViolation(f"unexpected element <{child.tag}> in archives", context)
        rras.append(_parse_rra(child, name, polldelay))

    host = HostConfig(
        name=name,
        ip=elem.get("ip", name),
        polldelay=polldelay,
        tags=_split_tags(elem.get("tag", "")),
        snmp_version=version,
        description=description,
        mailto=mailto,
        mibs=tuple(mibs),
        rras=tuple(rras),
    )

    graphs = []
    seen_graph_ids = set()
    _no_stray_text(slots["graphs"], context + " graphs")
    for child in slots["graphs"]:
        if child.tag != "rrdgraph":
            raise SchemaViolation(f"unexpected element <{child.tag}> in graphs", context)
        graph = _parse_graph(child, host)
        if graph.id in seen_graph_ids:
            raise DuplicateId(f"duplicate graph id {graph.id!r}", context)
        seen_graph_ids.add(graph.id)
        graphs.append(graph)
    return HostConfig(**{**host.__dict__, "graphs": tuple(graphs)})


def parse_config(xml_text: str, base_dir: str | None = None) -> MonitorConfig:
    """Parse and validate a monitor document, materializing every default.

    Directory attributes resolve against `base_dir` when given (the config
    file's own directory when loaded from disk), so behavior does not depend
    on the launch cwd.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise WellFormednessError(f"not well-formed XML: {exc}") from None
    if root.tag != "monitor":
        raise SchemaViolation(f"root element must be <monitor>, got <{root.tag}>")
    _check_attrs(root, _MONITOR_ATTRS, "monitor")
    _no_stray_text(root, "monitor")

    num_connections = 50
    if root.get("pmc-num-connections") is not None:
        num_connections = _parse_int(root.get("pmc-num-connections"),
                                     "pmc-num-connections", "monitor")
        if num_connections < 1:
            raise BadValue(f"pmc-num-connections must be >= 1, got {num_connections}", "monitor")
    verbosity = 3
    if root.get("pmc-verbosity") is not None:
        verbosity = _parse_int(root.get("pmc-verbosity"), "pmc-verbosity", "monitor")
        if not 0 <= verbosity <= 3:
            raise BadValue(f"pmc-verbosity must be 0..3, got {verbosity}", "monitor")
    http_port = 8001
    if root.get("http-port") is not None:
        http_port = _parse_int(root.get("http-port"), "http-port", "monitor")
        if not 1 <= http_port <= 65535:
            raise BadValue(f"http-port must be 1..65535, got {http_port}", "monitor")

    def resolve(path: str | None) -> str | None:
        if path is None or base_dir is None:
            return path
        return os.path.normpath(os.path.join(base_dir, path))

    hosts = []
    seen_names = set()
    for child in root:
        if child.tag != "host":
            raise SchemaViolation(f"unexpected element <{child.tag}> under <monitor>")
        host = _parse_host(child)
        if host.name in seen_names:
            raise DuplicateId(f"duplicate host name {host.name!r}")
        seen_names.add(host.name)
        hosts.append(host)
    if not hosts:
        raise SchemaViolation("monitor needs at least one host")

    return MonitorConfig(
        hosts=tuple(hosts),
        num_connections=num_connections,
        pmc_logfile=resolve(root.get("pmc-logfile")),
        verbosity=verbosity,
        rrd_dir=resolve(root.get("pmc-rrd-dir", ".")),
        xslt_dir=resolve(root.get("pmc-xslt-dir", ".")),
        html_dir=resolve(root.get("http-html-dir", ".")),
        http_port=http_port,
        http_logfile=resolve(root.get("http-logfile")),
        http_filter=root.get("http-filter"),
        http_filter_extensions=_split_extensions(root.get("http-filter-extensions", "")),
    )


def load_config(path: str) -> MonitorConfig:
    """Read and parse a config file; relative directories resolve beside it."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def check_config(path: str) -> list[str]:
    """Validate a config file, returning one diagnostic per error found.

    An empty list means the file parses cleanly. Collection is best-effort:
    after a host-level error, validation continues with the next host.
    """
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    base_dir = os.path.dirname(os.path.abspath(path))

    try:
        parse_config(text, base_dir=base_dir)
        return []
    except ConfigError as first:
        diagnostics = [str(first)]

    # fail-fast parsing stopped at the first error; rescan host-by-host so a
    # broken host does not mask diagnostics in later ones
    try:
        root = ET.fromstring(text)
    except ET.ParseError:
        return diagnostics
    if root.tag != "monitor":
        return diagnostics
    found_first = False
    for child in root:
        if child.tag != "host":
            continue
        try:
            _parse_host(child)
        except ConfigError as exc:
            if str(exc) == diagnostics[0] and not found_first:
                found_first = True
                continue
            diagnostics.append(str(exc))
    return diagnostics


def serialize_config(cfg: MonitorConfig) -> str:
    """Write a config back out; reparsing the result yields an equal config."""
    out = ["<?xml version=\"1.0\"?>"]
    out.append(
        "<monitor pmc-num-connections={} pmc-verbosity={} pmc-rrd-dir={} "
        "pmc-xslt-dir={} http-html-dir={} http-port={}{}{}{}{}>".format(
            quoteattr(str(cfg.num_connections)),
            quoteattr(str(cfg.verbosity)),
            quoteattr(cfg.rrd_dir),
            quoteattr(cfg.xslt_dir),
            quoteattr(cfg.html_dir),
            quoteattr(str(cfg.http_port)),
            f" pmc-logfile={quoteattr(cfg.pmc_logfile)}" if cfg.pmc_logfile else "",
            f" http-logfile={quoteattr(cfg.http_logfile)}" if cfg.http_logfile else "",
            f" http-filter={quoteattr(cfg.http_filter)}" if cfg.http_filter else "",
            " http-filter-extensions={}".format(
                quoteattr(" ".join(cfg.http_filter_extensions)))
            if cfg.http_filter_extensions else "",
        ))
    for host in cfg.hosts:
        attrs = [
            f"name={quoteattr(host.name)}",
            f"ip={quoteattr(host.ip)}",
            f"polldelay={quoteattr(_num_text(host.polldelay))}",
        ]
        if host.tags:
            attrs.append(f"tag={quoteattr(' '.join(host.tags))}")
        attrs.append("snmpversion={}".format(
            quoteattr("1" if host.snmp_version == SnmpVersion.V1 else "2c")))
        out.append(f"  <host {' '.join(attrs)}>")
        if host.description is not None:
            out.append(f"    <description>{escape(host.description)}</description>")
        if host.mailto is not None:
            out.append(f"    <mailto>{escape(host.mailto)}</mailto>")
        out.append("    <miblist>")
        for mib in host.mibs:
            parts = [
                f"id={quoteattr(mib.id)}",
                f"name={quoteattr(mib.name)}",
                f"type={quoteattr(mib.kind.value)}",
                f"community={quoteattr(mib.community)}",
            ]
            if mib.min is not None:
                parts.append(f"min={quoteattr(_num_text(mib.min))}")
            if mib.max is not None:
                parts.append(f"max={quoteattr(_num_text(mib.max))}")
            out.append(f"      <mib {' '.join(parts)}/>")
        out.append("    </miblist>")
        out.append("    <archives>")
        for rra in host.rras:
            out.append(
                "      <rra cf={} xff={} granularity={} expire={}/>".format(
                    quoteattr(rra.cf.value), quoteattr(_num_text(rra.xff)),
                    quoteattr(_num_text(rra.granularity)), quoteattr(_num_text(rra.expire))))
        out.append("    </archives>")
        out.append("    <graphs>")
        for graph in host.graphs:
            out.append(
                "      <rrdgraph id={} width={} height={} seconds={} title={}>".format(
                    quoteattr(graph.id), quoteattr(str(graph.width)),
                    quoteattr(str(graph.height)), quoteattr(graph.seconds),
                    quoteattr(graph.title)))
            for line in graph.body:
                out.append(f"        <line>{escape(line)}</line>")
            out.append("      </rrdgraph>")
        out.append("    </graphs>")
        out.append("  </host>")
    out.append("</monitor>")
    return "\n".join(out) + "\n"


def _num_text(value: float) -> str:
    # integral floats print without the trailing .0 so documents stay tidy
    if float(value) == int(value):
        return str(int(value))
    return repr(float(value))
