"""SNMP v1/v2c GetRequest/Response codec over the BER subset SNMP needs.

Stateless pure functions over byte buffers. Only the two PDU types the
poller exchanges are supported; everything else is rejected as malformed.
Constructed TLVs are emitted with definite long-form (3-byte) lengths,
matching the classic C agent stacks this speaks to on the wire; the decoder
accepts any definite-length form. Indefinite lengths are rejected.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

MAX_DATAGRAM = 65507  # UDP payload limit

# Universal tags
TAG_INTEGER = 0x02
TAG_OCTET_STRING = 0x04
TAG_NULL = 0x05
TAG_OID = 0x06
TAG_SEQUENCE = 0x30

# SNMP application tags
TAG_IPADDRESS = 0x40
TAG_COUNTER32 = 0x41
TAG_GAUGE32 = 0x42
TAG_TIMETICKS = 0x43
TAG_OPAQUE = 0x44
TAG_COUNTER64 = 0x46

# v2c varbind exception tags (context class)
TAG_NO_SUCH_OBJECT = 0x80
TAG_NO_SUCH_INSTANCE = 0x81
TAG_END_OF_MIB_VIEW = 0x82


class SnmpVersion(enum.IntEnum):
    V1 = 0
    V2C = 1


def as_version(version) -> "SnmpVersion":
    """Coerce an SnmpVersion, its integer code, or the textual "1"/"2c"."""
    if isinstance(version, SnmpVersion):
        return version
    if isinstance(version, int):
        return SnmpVersion(version)
    text = str(version).strip().lower()
    if text in ("1", "v1"):
        return SnmpVersion.V1
    if text in ("2c", "2", "v2c"):
        return SnmpVersion.V2C
    raise ValueError(f"unknown SNMP version {version!r}")


class PduType(enum.IntEnum):
    GET_REQUEST = 0xA0
    RESPONSE = 0xA2


#: error-status codes a Response may carry (RFC 1157 + v2c additions)
ERROR_STATUS_NAMES = {
    0: "noError",
    1: "tooBig",
    2: "noSuchName",
    3: "badValue",
    4: "readOnly",
    5: "genErr",
    6: "noAccess",
    7: "wrongType",
    8: "wrongLength",
    9: "wrongEncoding",
    10: "wrongValue",
    11: "noCreation",
    12: "inconsistentValue",
    13: "resourceUnavailable",
    14: "commitFailed",
    15: "undoFailed",
    16: "authorizationError",
    17: "notWritable",
    18: "inconsistentName",
}


class SnmpError(Exception):
    """Base class for codec errors."""


class Malformed(SnmpError):
    """Input is not a decodable SNMP message; `offset` points at the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedVersion(SnmpError):
    def __init__(self, version: int):
        super().__init__(f"unsupported SNMP version field {version}")
        self.version = version


class TooLarge(SnmpError):
    """Encoded message would not fit in one UDP datagram."""


class UnknownName(SnmpError):
    """Symbolic OID name not present in the built-in table."""


class BadArc(SnmpError):
    """OID text contains a non-numeric or structurally invalid arc."""


class Oid(tuple):
    """Object identifier: a tuple of non-negative integer arcs."""

    def __new__(cls, arcs):
        return super().__new__(cls, tuple(int(a) for a in arcs))

    def __str__(self) -> str:
        return "." + ".".join(str(a) for a in self)

    def __repr__(self) -> str:
        return f"Oid({str(self)!r})"


def _check_oid(oid: Oid) -> None:
    if len(oid) < 2:
        raise BadArc(f"OID needs at least two arcs: {oid!r}")
    if oid[0] not in (0, 1, 2):
        raise BadArc(f"first arc must be 0, 1 or 2: {oid!r}")
    if oid[0] < 2 and oid[1] >= 40:
        raise BadArc(f"second arc must be < 40 when first is 0 or 1: {oid!r}")
    if any(a < 0 for a in oid):
        raise BadArc(f"negative arc in {oid!r}")


# ---------------------------------------------------------------------------
# Value model

@dataclass(frozen=True)
class Integer:
    value: int


@dataclass(frozen=True)
class Counter32:
    value: int


@dataclass(frozen=True)
class Gauge32:
    value: int


@dataclass(frozen=True)
class TimeTicks:
    value: int


@dataclass(frozen=True)
class Counter64:
    value: int


@dataclass(frozen=True)
class OctetString:
    value: bytes


@dataclass(frozen=True)
class OidValue:
    value: Oid


@dataclass(frozen=True)
class IpAddress:
    value: bytes  # 4 octets


@dataclass(frozen=True)
class Null:
    pass


@dataclass(frozen=True)
class NoSuchObject:
    pass


@dataclass(frozen=True)
class NoSuchInstance:
    pass


@dataclass(frozen=True)
class EndOfMibView:
    pass


@dataclass(frozen=True)
class OpaqueValue:
    """Value with a tag this codec does not interpret; content kept verbatim."""

    tag: int
    data: bytes


#: tags that only make sense in a v2c message
V2C_ONLY_TAGS = (NoSuchObject, NoSuchInstance, EndOfMibView)

#: value classes carrying an unsigned raw reading the collector can use
UNSIGNED_VALUE_TYPES = (Counter32, Gauge32, TimeTicks, Counter64)


@dataclass(frozen=True)
class VarBind:
    oid: Oid
    value: object


@dataclass(frozen=True)
class SnmpMessage:
    version: SnmpVersion
    community: bytes
    pdu_type: PduType
    request_id: int
    error_status: int
    error_index: int
    varbinds: tuple


# ---------------------------------------------------------------------------
# Encoding

def _encode_length(n: int) -> bytes:
    if n < 0x80:
        return bytes([n])
    out = []
    while n:
        out.append(n & 0xFF)
        n >>= 8
    out.reverse()
    return bytes([0x80 | len(out)]) + bytes(out)


def _encode_length_long(n: int) -> bytes:
    # fixed 3-byte form: how the classic C stacks frame every field when
    # building a packet front to back with the length reserved up front
    if n > 0xFFFF:
        return _encode_length(n)
    return bytes([0x82, n >> 8, n & 0xFF])


def _tlv(tag: int, payload: bytes) -> bytes:
    return bytes([tag]) + _encode_length(len(payload)) + payload


def _wire_tlv(tag: int, payload: bytes) -> bytes:
    # message framing keeps the long form everywhere so our datagrams size
    # like the traditional agent/manager implementations on the wire
    return bytes([tag]) + _encode_length_long(len(payload)) + payload


def _int_payload(value: int) -> bytes:
    # minimal two's complement
    if value == 0:
        return b"\x00"
    length = (value.bit_length() + 8) // 8  # +8 keeps the sign bit clear/set
    out = value.to_bytes(length, "big", signed=True)
    # strip redundant leading byte when the sign is still encoded
    while len(out) > 1 and (
        (out[0] == 0x00 and out[1] < 0x80) or (out[0] == 0xFF and out[1] >= 0x80)
    ):
        out = out[1:]
    return out


def _uint_payload(value: int) -> bytes:
    if value < 0:
        raise ValueError(f"unsigned SNMP value cannot be negative: {value}")
    if value == 0:
        return b"\x00"
    out = value.to_bytes((value.bit_length() + 7) // 8, "big")
    if out[0] & 0x80:
        out = b"\x00" + out  # keep it non-negative as an INTEGER body
    return out


def encode_integer(value: int) -> bytes:
    return _tlv(TAG_INTEGER, _int_payload(value))


def _oid_payload(oid: Oid) -> bytes:
    _check_oid(oid)
    body = bytearray()
    body.extend(_encode_base128(40 * oid[0] + oid[1]))
    for arc in oid[2:]:
        body.extend(_encode_base128(arc))
    return bytes(body)


def encode_oid(oid: Oid) -> bytes:
    """BER OBJECT IDENTIFIER TLV; first two arcs pack as 40*a0 + a1."""
    return _tlv(TAG_OID, _oid_payload(oid))


def _encode_base128(n: int) -> bytes:
    if n == 0:
        return b"\x00"
    chunks = []
    while n:
        chunks.append(n & 0x7F)
        n >>= 7
    chunks.reverse()
    return bytes(c | 0x80 for c in chunks[:-1]) + bytes([chunks[-1]])


def _value_parts(value) -> tuple:
    if isinstance(value, Null):
        return TAG_NULL, b""
    if isinstance(value, Integer):
        return TAG_INTEGER, _int_payload(value.value)
    if isinstance(value, Counter32):
        return TAG_COUNTER32, _uint_payload(value.value)
    if isinstance(value, Gauge32):
        return TAG_GAUGE32, _uint_payload(value.value)
    if isinstance(value, TimeTicks):
        return TAG_TIMETICKS, _uint_payload(value.value)
    if isinstance(value, Counter64):
        return TAG_COUNTER64, _uint_payload(value.value)
    if isinstance(value, OctetString):
        return TAG_OCTET_STRING, value.value
    if isinstance(value, OidValue):
        return TAG_OID, _oid_payload(value.value)
    if isinstance(value, IpAddress):
        return TAG_IPADDRESS, value.value
    if isinstance(value, NoSuchObject):
        return TAG_NO_SUCH_OBJECT, b""
    if isinstance(value, NoSuchInstance):
        return TAG_NO_SUCH_INSTANCE, b""
    if isinstance(value, EndOfMibView):
        return TAG_END_OF_MIB_VIEW, b""
    if isinstance(value, OpaqueValue):
        return value.tag, value.data
    raise TypeError(f"cannot encode varbind value {value!r}")


def _encode_value(value) -> bytes:
    tag, payload = _value_parts(value)
    return _tlv(tag, payload)


def encode_message(msg: SnmpMessage) -> bytes:
    """Encode a full SNMP message; raises TooLarge past the datagram limit."""
    if msg.version == SnmpVersion.V1:
        for vb in msg.varbinds:
            if isinstance(vb.value, V2C_ONLY_TAGS):
                raise ValueError(f"{type(vb.value).__name__} is not valid in a v1 message")
    vbl = b"".join(
        _wire_tlv(TAG_SEQUENCE,
                  _wire_tlv(TAG_OID, _oid_payload(vb.oid))
                  + _wire_tlv(*_value_parts(vb.value)))
        for vb in msg.varbinds
    )
    pdu = (
        # request-id goes out as a full 32-bit integer, like the classic stacks
        _wire_tlv(TAG_INTEGER, msg.request_id.to_bytes(4, "big", signed=True))
        + _wire_tlv(TAG_INTEGER, _int_payload(msg.error_status))
        + _wire_tlv(TAG_INTEGER, _int_payload(msg.error_index))
        + _wire_tlv(TAG_SEQUENCE, vbl)
    )
    body = (
        _wire_tlv(TAG_INTEGER, _int_payload(int(msg.version)))
        + _wire_tlv(TAG_OCTET_STRING, msg.community)
        + _wire_tlv(int(msg.pdu_type), pdu)
    )
    out = _wire_tlv(TAG_SEQUENCE, body)
    if len(out) > MAX_DATAGRAM:
        raise TooLarge(f"encoded message is {len(out)} bytes, limit {MAX_DATAGRAM}")
    return out


def encode_get_request(version, community, request_id: int, oids) -> bytes:
    """One GetRequest with a Null-valued varbind per OID, in one datagram."""
    if not oids:
        raise ValueError("GetRequest needs at least one OID")
    if isinstance(community, str):
        community = community.encode()
    if not community:
        raise ValueError("community must be non-empty")
    msg = SnmpMessage(
        version=as_version(version),
        community=community,
        pdu_type=PduType.GET_REQUEST,
        request_id=request_id,
        error_status=0,
        error_index=0,
        varbinds=tuple(VarBind(oid, Null()) for oid in oids),
    )
    return encode_message(msg)


def encode_response(version, community, request_id: int, varbinds,
                    error_status: int = 0, error_index: int = 0) -> bytes:
    if isinstance(community, str):
        community = community.encode()
    msg = SnmpMessage(
        version=as_version(version),
        community=community,
        pdu_type=PduType.RESPONSE,
        request_id=request_id,
        error_status=error_status,
        error_index=error_index,
        varbinds=tuple(varbinds),
    )
    return encode_message(msg)


# ---------------------------------------------------------------------------
# Decoding

class _Reader:
    """Cursor over a byte buffer; every length is capped by the remaining input."""

    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] in the outermost buffer

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def read_tlv(self):
        """Return (tag, content, content_offset) and advance past the TLV."""
        if self.remaining() < 2:
            raise Malformed("truncated TLV header", self.offset)
        tag = self.data[self.pos]
        if tag & 0x1F == 0x1F:
            raise Malformed("multi-byte tags are not used by SNMP", self.offset)
        self.pos += 1
        length = self._read_length()
        if length > self.remaining():
            raise Malformed(
                f"declared length {length} overruns remaining {self.remaining()} bytes",
                self.offset,
            )
        start = self.pos
        self.pos += length
        return tag, self.data[start:self.pos], self.base + start

    def _read_length(self) -> int:
        first = self.data[self.pos]
        self.pos += 1
        if first < 0x80:
            return first
        n_octets = first & 0x7F
        if n_octets == 0:
            raise Malformed("indefinite length is not allowed", self.offset - 1)
        if n_octets > 4 or n_octets > self.remaining():
            raise Malformed("unreasonable length field", self.offset - 1)
        value = int.from_bytes(self.data[self.pos:self.pos + n_octets], "big")
        self.pos += n_octets
        return value


def _decode_int(content: bytes, offset: int, signed: bool = True) -> int:
    if not content:
        raise Malformed("empty INTEGER body", offset)
    if len(content) > 9:
        raise Malformed("oversized INTEGER body", offset)
    return int.from_bytes(content, "big", signed=signed)


def decode_oid(data: bytes) -> Oid:
    """Decode a standalone OBJECT IDENTIFIER TLV."""
    reader = _Reader(data)
    tag, content, off = reader.read_tlv()
    if tag != TAG_OID:
        raise Malformed(f"expected OID tag 0x06, got 0x{tag:02X}", 0)
    return _decode_oid_content(content, off)


def _decode_oid_content(content: bytes, offset: int) -> Oid:
    if not content:
        raise Malformed("empty OID body", offset)
    arcs = []
    value = 0
    started = False
    for i, byte in enumerate(content):
        if not started and byte == 0x80:
            raise Malformed("non-minimal base-128 arc", offset + i)
        started = True
        value = (value << 7) | (byte & 0x7F)
        if value > 0xFFFFFFFF:
            raise Malformed("OID arc exceeds 32 bits", offset + i)
        if not byte & 0x80:
            arcs.append(value)
            value = 0
            started = False
    if started:
        raise Malformed("OID body ends mid-arc", offset + len(content) - 1)
    first = arcs[0]
    if first < 40:
        head = [0, first]
    elif first < 80:
        head = [1, first - 40]
    else:
        head = [2, first - 80]
    return Oid(head + arcs[1:])


def _decode_value(tag: int, content: bytes, offset: int):
    if tag == TAG_NULL:
        if content:
            raise Malformed("NULL with non-empty body", offset)
        return Null()
    if tag == TAG_INTEGER:
        return Integer(_decode_int(content, offset, signed=True))
    if tag == TAG_COUNTER32:
        return Counter32(_decode_int(content, offset, signed=False))
    if tag == TAG_GAUGE32:
        return Gauge32(_decode_int(content, offset, signed=False))
    if tag == TAG_TIMETICKS:
        return TimeTicks(_decode_int(content, offset, signed=False))
    if tag == TAG_COUNTER64:
        return Counter64(_decode_int(content, offset, signed=False))
    if tag == TAG_OCTET_STRING:
        return OctetString(content)
    if tag == TAG_OID:
        return OidValue(_decode_oid_content(content, offset))
    if tag == TAG_IPADDRESS:
        if len(content) != 4:
            raise Malformed("IpAddress body must be 4 octets", offset)
        return IpAddress(content)
    if tag == TAG_NO_SUCH_OBJECT:
        return NoSuchObject()
    if tag == TAG_NO_SUCH_INSTANCE:
        return NoSuchInstance()
    if tag == TAG_END_OF_MIB_VIEW:
        return EndOfMibView()
    return OpaqueValue(tag, content)


def decode_message(data: bytes) -> SnmpMessage:
    """Full structural decode of one SNMP datagram."""
    outer = _Reader(data)
    tag, body, body_off = outer.read_tlv()
    if tag != TAG_SEQUENCE:
        raise Malformed(f"message must start with SEQUENCE, got tag 0x{tag:02X}", 0)
    if outer.remaining():
        raise Malformed("trailing bytes after message", outer.offset)

    reader = _Reader(body, body_off)
    tag, content, off = reader.read_tlv()
    if tag != TAG_INTEGER:
        raise Malformed("expected version INTEGER", off)
    version = _decode_int(content, off)
    if version not in (0, 1):
        raise UnsupportedVersion(version)

    tag, community, off = reader.read_tlv()
    if tag != TAG_OCTET_STRING:
        raise Malformed("expected community OCTET STRING", off)

    tag, pdu_body, pdu_off = reader.read_tlv()
    if tag not in (PduType.GET_REQUEST, PduType.RESPONSE):
        raise Malformed(f"unsupported PDU tag 0x{tag:02X}", pdu_off)
    pdu_type = PduType(tag)
    if reader.remaining():
        raise Malformed("trailing bytes after PDU", reader.offset)

    pdu = _Reader(pdu_body, pdu_off)
    t, content, off = pdu.read_tlv()
    if t != TAG_INTEGER:
        raise Malformed("expected request-id INTEGER", off)
    request_id = _decode_int(content, off)
    if not -(2 ** 31) <= request_id < 2 ** 31:
        raise Malformed("request-id outside 32-bit range", off)
    t, content, off = pdu.read_tlv()
    if t != TAG_INTEGER:
        raise Malformed("expected error-status INTEGER", off)
    error_status = _decode_int(content, off)
    if error_status not in ERROR_STATUS_NAMES:
        raise Malformed(f"undefined error-status {error_status}", off)
    t, content, off = pdu.read_tlv()
    if t != TAG_INTEGER:
        raise Malformed("expected error-index INTEGER", off)
    error_index = _decode_int(content, off)

    t, vbl_body, vbl_off = pdu.read_tlv()
    if t != TAG_SEQUENCE:
        raise Malformed("expected varbind-list SEQUENCE", vbl_off)
    if pdu.remaining():
        raise Malformed("trailing bytes after varbind list", pdu.offset)

    varbinds = []
    vbl = _Reader(vbl_body, vbl_off)
    while vbl.remaining():
        t, vb_body, vb_off = vbl.read_tlv()
        if t != TAG_SEQUENCE:
            raise Malformed("expected varbind SEQUENCE", vb_off)
        vb = _Reader(vb_body, vb_off)
        t, content, off = vb.read_tlv()
        if t != TAG_OID:
            raise Malformed("expected varbind OID", off)
        oid = _decode_oid_content(content, off)
        t, content, off = vb.read_tlv()
        value = _decode_value(t, content, off)
        if vb.remaining():
            raise Malformed("trailing bytes in varbind", vb.offset)
        if version == SnmpVersion.V1 and isinstance(value, V2C_ONLY_TAGS):
            raise Malformed(f"{type(value).__name__} in a v1 message", off)
        varbinds.append(VarBind(oid, value))

    if error_index < 0 or error_index > len(varbinds):
        raise Malformed(f"error-index {error_index} exceeds varbind count", pdu_off)

    return SnmpMessage(
        version=SnmpVersion(version),
        community=community,
        pdu_type=pdu_type,
        request_id=request_id,
        error_status=error_status,
        error_index=error_index,
        varbinds=tuple(varbinds),
    )


# ---------------------------------------------------------------------------
# Symbolic names

_MIB2 = (1, 3, 6, 1, 2, 1)
_HOST = _MIB2 + (25,)
_UCD = (1, 3, 6, 1, 4, 1, 2021)

#: built-in MIB-II / Host-Resources / UCD names; full MIB parsing is out of scope
SYMBOLIC_NAMES = {
    # system group
    "sysDescr": _MIB2 + (1, 1),
    "sysObjectID": _MIB2 + (1, 2),
    "sysUpTime": _MIB2 + (1, 3),
    "sysContact": _MIB2 + (1, 4),
    "sysName": _MIB2 + (1, 5),
    "sysLocation": _MIB2 + (1, 6),
    "sysServices": _MIB2 + (1, 7),
    # interfaces group
    "ifNumber": _MIB2 + (2, 1),
    "ifDescr": _MIB2 + (2, 2, 1, 2),
    "ifType": _MIB2 + (2, 2, 1, 3),
    "ifSpeed": _MIB2 + (2, 2, 1, 5),
    "ifOperStatus": _MIB2 + (2, 2, 1, 8),
    "ifInOctets": _MIB2 + (2, 2, 1, 10),
    "ifInUcastPkts": _MIB2 + (2, 2, 1, 11),
    "ifInErrors": _MIB2 + (2, 2, 1, 14),
    "ifOutOctets": _MIB2 + (2, 2, 1, 16),
    "ifOutUcastPkts": _MIB2 + (2, 2, 1, 17),
    "ifOutErrors": _MIB2 + (2, 2, 1, 20),
    # host resources
    "hrSystemUptime": _HOST + (1, 1),
    "hrSystemDate": _HOST + (1, 2),
    "hrSystemNumUsers": _HOST + (1, 5),
    "hrSystemProcesses": _HOST + (1, 6),
    "hrMemorySize": _HOST + (2, 2),
    "hrStorageIndex": _HOST + (2, 3, 1, 1),
    "hrStorageDescr": _HOST + (2, 3, 1, 3),
    "hrStorageAllocationUnits": _HOST + (2, 3, 1, 4),
    "hrStorageSize": _HOST + (2, 3, 1, 5),
    "hrStorageUsed": _HOST + (2, 3, 1, 6),
    "hrProcessorLoad": _HOST + (3, 3, 1, 2),
    # UCD memory / load / cpu
    "memTotalSwap": _UCD + (4, 3),
    "memAvailSwap": _UCD + (4, 4),
    "memTotalReal": _UCD + (4, 5),
    "memAvailReal": _UCD + (4, 6),
    "memShared": _UCD + (4, 13),
    "memBuffer": _UCD + (4, 14),
    "memCached": _UCD + (4, 15),
    "laLoad": _UCD + (10, 1, 3),
    "laLoadInt": _UCD + (10, 1, 5),
    "ssCpuUser": _UCD + (11, 9),
    "ssCpuSystem": _UCD + (11, 10),
    "ssCpuIdle": _UCD + (11, 11),
    # UCD disk table / disk IO table
    "dskPath": _UCD + (9, 1, 2),
    "dskDevice": _UCD + (9, 1, 3),
    "dskTotal": _UCD + (9, 1, 6),
    "dskAvail": _UCD + (9, 1, 7),
    "dskUsed": _UCD + (9, 1, 8),
    "dskPercent": _UCD + (9, 1, 9),
    "diskIONRead": _UCD + (13, 15, 1, 1, 3),
    "diskIONWritten": _UCD + (13, 15, 1, 1, 4),
    "diskIOReads": _UCD + (13, 15, 1, 1, 5),
    "diskIOWrites": _UCD + (13, 15, 1, 1, 6),
}

#: module-path segments tolerated (and ignored) before a symbolic name
MODULE_PREFIXES = frozenset({
    "iso", "org", "dod", "internet", "mgmt", "mib-2", "mib2",
    "system", "interfaces", "ifTable", "ifEntry",
    "host", "hr", "hrSystem", "hrStorage", "hrStorageTable", "hrStorageEntry",
    "hrDevice", "hrProcessorTable", "hrProcessorEntry",
    "private", "enterprises", "ucdavis", "ucd-snmp",
    "memory", "laTable", "laEntry", "systemStats",
    "dskTable", "dskEntry", "ucdDiskIOMIB", "diskIOTable", "diskIOEntry",
})


def parse_oid(text: str) -> Oid:
    """Parse dotted-decimal or symbolic OID notation.

    Dotted-decimal (optionally with a leading dot) maps arc-by-arc. Symbolic
    names resolve through the built-in table, with module prefixes in front
    and numeric instance suffixes behind ("system.sysUpTime.0").
    """
    s = text.strip()
    if not s:
        raise BadArc("empty OID string")
    explicit_decimal = s.startswith(".")
    parts = [p for p in s.lstrip(".").split(".")]
    if any(p == "" for p in parts):
        raise BadArc(f"empty arc in {text!r}")
    if all(p.isdigit() for p in parts):
        oid = Oid(int(p) for p in parts)
        _check_oid(oid)
        return oid
    if explicit_decimal:
        bad = next(p for p in parts if not p.isdigit())
        raise BadArc(f"non-numeric segment {bad!r} in {text!r}")

    for i, part in enumerate(parts):
        if part in SYMBOLIC_NAMES:
            for prefix in parts[:i]:
                if prefix not in MODULE_PREFIXES:
                    raise UnknownName(f"unknown module prefix {prefix!r} in {text!r}")
            suffix = parts[i + 1:]
            if not all(p.isdigit() for p in suffix):
                bad = next(p for p in suffix if not p.isdigit())
                raise BadArc(f"non-numeric instance segment {bad!r} in {text!r}")
            return Oid(SYMBOLIC_NAMES[part] + tuple(int(p) for p in suffix))
    raise UnknownName(f"no known symbol in {text!r}")
