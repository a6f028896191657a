"""Packet-capture CSV parsing and TCP flow assembly.

A capture is a CSV export with one row per packet.  Flows are keyed by the
device-side address/port and the server address/port; a silence longer
than the configured timeout closes a flow and the next packet on the same
key opens a new one.
"""

from __future__ import annotations

import csv
import io
import ipaddress
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 4.5

DEFAULT_SCHEMA: tuple[str, ...] = (
    "timestamp",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "protocol",
    "size",
    "flags",
    "seq",
    "payload_len",
)

TCP_FLAGS = frozenset({"SYN", "ACK", "FIN", "RST", "PSH"})


class CaptureError(ValueError):
    """Raised when a capture or label file cannot be parsed."""


class Protocol(Enum):
    TCP = "TCP"
    OTHER = "other"


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: Protocol
    size: int
    flags: frozenset[str]
    seq: int
    payload_len: int

    def __post_init__(self):
        if not 0 <= self.src_port <= 65535 or not 0 <= self.dst_port <= 65535:
            raise ValueError(f"port out of range: {self.src_port}, {self.dst_port}")
        if self.size < 0 or self.payload_len < 0 or self.seq < 0:
            raise ValueError("size, seq and payload_len must be non-negative")
        if self.payload_len > self.size:
            raise ValueError(f"payload_len {self.payload_len} exceeds size {self.size}")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")

    def has(self, flag: str) -> bool:
        return flag in self.flags


@dataclass(frozen=True, order=True)
class FlowKey:
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int

    def __str__(self) -> str:
        return f"{self.client_ip}:{self.client_port}-{self.server_ip}:{self.server_port}"

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        """Inverse of ``str(key)``: ``client_ip:port-server_ip:port``."""
        try:
            client, server = text.strip().split("-")
            cip, cport = client.rsplit(":", 1)
            sip, sport = server.rsplit(":", 1)
            ipaddress.IPv4Address(cip)
            ipaddress.IPv4Address(sip)
            return cls(cip, int(cport), sip, int(sport))
        except ValueError as exc:
            raise CaptureError(f"bad flow key {text!r}") from exc


@dataclass
class Flow:
    """Time-ordered packets of one TCP session segment."""

    key: FlowKey
    packets: list[PacketRecord]
    start_time: float
    end_time: float
    label: Optional[str] = None
    account: Optional[str] = None

    def is_outgoing(self, pkt: PacketRecord) -> bool:
        return pkt.src_ip == self.key.client_ip and pkt.src_port == self.key.client_port

    def with_packets(self, packets: list[PacketRecord]) -> "Flow":
        # start/end stay those of the assembled session so label matching
        # keeps working after packet filtering
        return replace(self, packets=list(packets))

    def __len__(self) -> int:
        return len(self.packets)


@dataclass(frozen=True)
class DeviceConfig:
    device_ip: str
    timeout_seconds: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        ipaddress.IPv4Address(self.device_ip)
        if not self.timeout_seconds > 0:
            raise ValueError("timeout_seconds must be positive")


def _parse_flags(text: str) -> frozenset[str]:
    if not text.strip():
        return frozenset()
    flags = frozenset(f.strip().upper() for f in text.split("|") if f.strip())
    unknown = flags - TCP_FLAGS
    if unknown:
        raise ValueError(f"unknown TCP flags {sorted(unknown)}")
    return flags


def _parse_row(row: Sequence[str], schema: Sequence[str]) -> PacketRecord:
    values = dict(zip(schema, (v.strip() for v in row)))
    for name in ("src_ip", "dst_ip"):
        ipaddress.IPv4Address(values[name])
    proto = Protocol.TCP if values["protocol"].upper() == "TCP" else Protocol.OTHER
    return PacketRecord(
        timestamp=float(values["timestamp"]),
        src_ip=values["src_ip"],
        dst_ip=values["dst_ip"],
        src_port=int(values["src_port"]),
        dst_port=int(values["dst_port"]),
        protocol=proto,
        size=int(values["size"]),
        flags=_parse_flags(values.get("flags", "")),
        seq=int(values.get("seq") or 0),
        payload_len=int(values.get("payload_len") or 0),
    )


def parse_capture(csv_text: str, schema: Sequence[str] = DEFAULT_SCHEMA) -> list[PacketRecord]:
    """Parse capture CSV text into packet records, in file order.

    The header row must list exactly the columns of ``schema`` (in order).
    Non-TCP rows are kept with ``Protocol.OTHER``.  Any malformed row raises
    :class:`CaptureError` naming its 1-based line number.
    """
    reader = csv.reader(io.StringIO(csv_text))
    rows = [(n, r) for n, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise CaptureError("no rows")
    header_line, header = rows[0]
    if [h.strip() for h in header] != list(schema):
        raise CaptureError(f"line {header_line}: header {header} does not match schema {list(schema)}")
    if len(rows) == 1:
        raise CaptureError("no rows")

    packets = []
    for line, row in rows[1:]:
        if len(row) != len(schema):
            raise CaptureError(f"line {line}: expected {len(schema)} fields, got {len(row)}")
        try:
            packets.append(_parse_row(row, schema))
        except (ValueError, KeyError) as exc:
            raise CaptureError(f"line {line}: {exc}") from exc
    return packets


def read_capture(path, schema: Sequence[str] = DEFAULT_SCHEMA) -> list[PacketRecord]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_capture(text, schema)
    except CaptureError as exc:
        raise CaptureError(f"{path}: {exc}") from exc


def format_capture(packets: Iterable[PacketRecord]) -> str:
    """Serialise packets in the default column order."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(DEFAULT_SCHEMA)
    for p in packets:
        writer.writerow([
            f"{p.timestamp:.6f}", p.src_ip, p.src_port, p.dst_ip, p.dst_port,
            p.protocol.value, p.size, "|".join(sorted(p.flags)), p.seq, p.payload_len,
        ])
    return out.getvalue()


def flow_key_for(pkt: PacketRecord, device_ip: str) -> Optional[FlowKey]:
    if pkt.src_ip == device_ip:
        return FlowKey(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
    if pkt.dst_ip == device_ip:
        return FlowKey(pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)
    return None


@dataclass
class AssemblyStats:
    non_tcp: int = 0
    foreign: int = 0
    flows: int = 0


def assemble_flows(
    packets: Iterable[PacketRecord],
    cfg: DeviceConfig,
    stats: Optional[AssemblyStats] = None,
) -> list[Flow]:
    """Group TCP packets into flows, splitting on inactivity.

    Packets are stable-sorted by timestamp first.  A gap strictly larger than
    ``cfg.timeout_seconds`` between consecutive packets of one key starts a
    new flow.  Output flows are ordered by start time, then key.
    """
    stats = stats if stats is not None else AssemblyStats()
    ordered = sorted(packets, key=lambda p: p.timestamp)
    open_flows: dict[FlowKey, Flow] = {}
    done: list[Flow] = []

    for pkt in ordered:
        if pkt.protocol is not Protocol.TCP:
            stats.non_tcp += 1
            continue
        key = flow_key_for(pkt, cfg.device_ip)
        if key is None:
            stats.foreign += 1
            continue
        flow = open_flows.get(key)
        if flow is not None and pkt.timestamp - flow.end_time > cfg.timeout_seconds:
            done.append(flow)
            flow = None
        if flow is None:
            flow = Flow(key=key, packets=[], start_time=pkt.timestamp, end_time=pkt.timestamp)
            open_flows[key] = flow
        flow.packets.append(pkt)
        flow.end_time = pkt.timestamp

    done.extend(open_flows.values())
    done.sort(key=lambda f: (f.start_time, f.key))
    stats.flows = len(done)
    if stats.foreign:
        logger.info("dropped %d packets not involving %s", stats.foreign, cfg.device_ip)
    return done


# Label sidecar -----------------------------------------------------------

LABEL_COLUMNS = ("flow_start", "flow_key", "action_label", "account_id")


@dataclass(frozen=True)
class LabelEntry:
    """One sidecar line: a flow (or, with no key, an empty window marker)."""

    flow_start: float
    flow_key: Optional[FlowKey]
    action_label: str
    account_id: str
    window_id: Optional[str] = None


def parse_labels(csv_text: str) -> list[LabelEntry]:
    """Parse a label sidecar.

    Required columns are ``flow_start,flow_key,action_label,account_id``; an
    optional fifth ``window_id`` column groups flows into action windows.
    A row with an empty ``flow_key`` declares a window that produced no flow.
    """
    reader = csv.reader(io.StringIO(csv_text))
    rows = [(n, r) for n, r in enumerate(reader, start=1) if any(c.strip() for c in r)]
    if not rows:
        raise CaptureError("no rows")
    header = [h.strip() for h in rows[0][1]]
    if tuple(header[:4]) != LABEL_COLUMNS or header[4:] not in ([], ["window_id"]):
        raise CaptureError(f"line {rows[0][0]}: unexpected label header {header}")
    entries = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise CaptureError(f"line {line}: expected {len(header)} fields, got {len(row)}")
        row = [c.strip() for c in row]
        try:
            key = FlowKey.parse(row[1]) if row[1] else None
            entries.append(LabelEntry(
                flow_start=float(row[0]),
                flow_key=key,
                action_label=row[2],
                account_id=row[3],
                window_id=row[4] if len(row) > 4 and row[4] else None,
            ))
        except (ValueError, CaptureError) as exc:
            raise CaptureError(f"line {line}: {exc}") from exc
    return entries


def read_labels(path) -> list[LabelEntry]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return parse_labels(text)
    except CaptureError as exc:
        raise CaptureError(f"{path}: {exc}") from exc


def format_labels(entries: Iterable[LabelEntry]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LABEL_COLUMNS + ("window_id",))
    for e in entries:
        writer.writerow([
            f"{e.flow_start:.6f}", str(e.flow_key) if e.flow_key else "",
            e.action_label, e.account_id, e.window_id or "",
        ])
    return out.getvalue()


def match_labels(flows: Sequence[Flow], entries: Sequence[LabelEntry], tolerance: float = 1e-6) -> dict[int, LabelEntry]:
    """Map flow index -> sidecar entry with the same key whose start falls
    inside the flow's time span (widened by ``tolerance``)."""
    by_key: dict[FlowKey, list[LabelEntry]] = {}
    for e in entries:
        if e.flow_key is not None:
            by_key.setdefault(e.flow_key, []).append(e)
    matched = {}
    for i, flow in enumerate(flows):
        for e in by_key.get(flow.key, ()):
            if flow.start_time - tolerance <= e.flow_start <= flow.end_time + tolerance:
                matched[i] = e
                break
    return matched


__all__ = [
    "AssemblyStats", "CaptureError", "DEFAULT_SCHEMA", "DEFAULT_TIMEOUT", "DeviceConfig",
    "Flow", "FlowKey", "LabelEntry", "PacketRecord", "Protocol", "assemble_flows",
    "flow_key_for", "format_capture", "format_labels", "match_labels", "parse_capture",
    "parse_labels", "read_capture", "read_labels",
]
