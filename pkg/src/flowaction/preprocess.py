"""Domain filtering and per-flow packet filtering."""

from __future__ import annotations

import ipaddress
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .ingest import CaptureError, Flow

logger = logging.getLogger(__name__)


@dataclass
class OwnerMap:
    """Offline IP-prefix -> owner table with longest-prefix lookup."""

    entries: list[tuple[str, str]]
    target_owners: set[str] = field(default_factory=set)

    def __post_init__(self):
        nets = []
        for cidr, owner in self.entries:
            nets.append((ipaddress.IPv4Network(cidr, strict=False), owner))
        # longest prefix first; stable for equal lengths so the first entry wins
        nets.sort(key=lambda item: -item[0].prefixlen)
        self._nets = nets
        self.target_owners = set(self.target_owners)

    def owner(self, ip: str) -> Optional[str]:
        addr = ipaddress.IPv4Address(ip)
        for net, owner in self._nets:
            if addr in net:
                return owner
        return None

    def is_target(self, ip: str) -> bool:
        return self.owner(ip) in self.target_owners

    @classmethod
    def parse(cls, text: str, target_owners: Iterable[str] = ()) -> "OwnerMap":
        entries = []
        for n, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not parts[1]:
                raise CaptureError(f"owner map line {n}: expected 'CIDR,owner'")
            try:
                ipaddress.IPv4Network(parts[0], strict=False)
            except ValueError as exc:
                raise CaptureError(f"owner map line {n}: {exc}") from exc
            entries.append((parts[0], parts[1]))
        return cls(entries, set(target_owners))

    def format(self) -> str:
        return "".join(f"{cidr},{owner}\n" for cidr, owner in self.entries)


def read_owner_map(path, target_owners: Iterable[str] = ()) -> OwnerMap:
    with open(path, encoding="utf-8") as fh:
        return OwnerMap.parse(fh.read(), target_owners)


def domain_filter(flows: Iterable[Flow], owners: OwnerMap) -> list[Flow]:
    """Keep flows whose server address belongs to one of the target owners."""
    kept, dropped = [], 0
    for flow in flows:
        if owners.is_target(flow.key.server_ip):
            kept.append(flow)
        else:
            dropped += 1
    if dropped:
        logger.debug("domain filter dropped %d flows", dropped)
    return kept


def _is_pure_ack(pkt) -> bool:
    return pkt.has("ACK") and pkt.payload_len == 0


def packet_filter(flow: Flow) -> Flow:
    """Remove packets that carry no application data.

    Drops SYN packets, FIN/RST packets, pure ACKs (zero payload, which also
    covers the handshake-completing and teardown ACKs) and retransmissions,
    i.e. data packets repeating an earlier (direction, seq, payload_len).
    Surviving packets keep their order; the result may be empty.
    """
    seen: set[tuple[bool, int, int]] = set()
    kept = []
    for pkt in flow.packets:
        if pkt.has("SYN") or pkt.has("FIN") or pkt.has("RST") or _is_pure_ack(pkt):
            continue
        ident = (flow.is_outgoing(pkt), pkt.seq, pkt.payload_len)
        if ident in seen:
            continue
        seen.add(ident)
        kept.append(pkt)
    return flow.with_packets(kept)


def preprocess(flows: Iterable[Flow], owners: OwnerMap) -> list[Flow]:
    """Domain filter, packet filter, and drop flows left without packets."""
    out = []
    for flow in domain_filter(flows, owners):
        filtered = packet_filter(flow)
        if filtered.packets:
            out.append(filtered)
    return out
