"""Labelled synthetic captures with planted flow archetypes.

Every action template lists flow templates (a base complete series plus
byte jitter and a drop probability).  Each realised flow is a full TCP
session from its own client port: handshake, data packets carrying the
(jittered) sizes, interleaved pure ACKs, optional retransmissions and a
FIN teardown.  Background flows go to an owner outside the target set so
domain filtering removes them.
"""

from __future__ import annotations

import inspect
import ipaddress
import itertools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import tomli

from .ingest import (
    DEFAULT_TIMEOUT, FlowKey, LabelEntry, PacketRecord, Protocol, format_capture, format_labels,
)
from .preprocess import OwnerMap

HEADER_BYTES = 54       # Ethernet + IPv4 + TCP without options
SYN_BYTES = 74
MTU_FRAME = 1514

APP_OWNER, CDN_OWNER, NOISE_OWNER = "app", "cdn", "thirdparty"
OWNER_PREFIXES = {
    APP_OWNER: "31.13.64.0/24",
    CDN_OWNER: "23.32.0.0/16",
    NOISE_OWNER: "203.0.113.0/24",
}
TARGET_OWNERS = (APP_OWNER, CDN_OWNER)

# Example flows printed as complete series (negative = incoming bytes)
TABLE1_FLOWS: tuple[tuple[int, ...], ...] = (
    (282, -1514, -1514, -315, 188, -113, 514, 96, 1514, 179, 603, 98, 801, 98, -477),
    (282, -1514, -1514, -1266, -582, 188, -113, 692, 423, -661),
    (926, 655, 136, -1245, 913, 1514, 1514, 863, -1514, -107, -465, -172, -111),
)


@dataclass(frozen=True)
class FlowTemplate:
    base: tuple[int, ...]
    jitter: int = 0
    drop_prob: float = 0.0
    owner: str = APP_OWNER

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(int(v) for v in self.base))
        if not self.base or any(v == 0 for v in self.base):
            raise ValueError("base series must be non-empty with non-zero values")
        if any(abs(v) <= HEADER_BYTES or abs(v) > MTU_FRAME for v in self.base):
            raise ValueError(f"base sizes must lie in ({HEADER_BYTES}, {MTU_FRAME}]")
        if self.jitter < 0 or not 0 <= self.drop_prob < 1:
            raise ValueError("jitter must be >= 0 and drop_prob in [0, 1)")


@dataclass(frozen=True)
class ActionTemplate:
    label: str
    flow_templates: tuple[FlowTemplate, ...]
    window_duration: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "flow_templates", tuple(self.flow_templates))


@dataclass(frozen=True)
class ScenarioSpec:
    templates: tuple[ActionTemplate, ...]
    accounts: int = 3
    sequences_per_account: int = 1
    noise_flow_rate: float = 0.0
    seed: int = 0
    device_ip: str = "10.0.0.2"
    packet_gap: tuple[float, float] = (0.01, 0.3)
    ack_prob: float = 0.5
    retransmit_prob: float = 0.0
    window_gap: float = DEFAULT_TIMEOUT + 1.0
    start_time: float = 1_400_000_000.0

    def __post_init__(self):
        object.__setattr__(self, "templates", tuple(self.templates))
        if not self.templates or self.accounts < 1 or self.sequences_per_account < 1:
            raise ValueError("scenario needs templates, accounts and sequences")
        lo, hi = self.packet_gap
        if not 0.001 <= lo <= hi:
            raise ValueError("packet_gap must satisfy 0.001 <= low <= high")
        if self.window_gap <= 0 or self.noise_flow_rate < 0:
            raise ValueError("window_gap must be positive and noise_flow_rate non-negative")

    def experiment_ready(self) -> bool:
        """Enough classes and accounts for a train/validation/test split."""
        return len({t.label for t in self.templates}) >= 2 and self.accounts >= 3


@dataclass
class Scenario:
    packets: list[PacketRecord]
    labels: list[LabelEntry]
    owners: OwnerMap
    windows: int = 0
    flows_emitted: int = 0
    flows_dropped: int = 0

    def capture_csv(self) -> str:
        return format_capture(self.packets)

    def labels_csv(self) -> str:
        return format_labels(self.labels)

    def owners_csv(self) -> str:
        return self.owners.format()


def account_name(i: int) -> str:
    return f"acct{i + 1:02d}"


def owner_map() -> OwnerMap:
    return OwnerMap(list((cidr, owner) for owner, cidr in OWNER_PREFIXES.items()), set(TARGET_OWNERS))


class _Session:
    """Emits the packets of one TCP session."""

    def __init__(self, rng: np.random.Generator, spec: ScenarioSpec, key: FlowKey):
        self.rng, self.spec, self.key = rng, spec, key
        self.seq = {True: int(rng.integers(0, 2**31)), False: int(rng.integers(0, 2**31))}
        self.packets: list[PacketRecord] = []

    def emit(self, t: float, outgoing: bool, size: int, flags: set[str], payload: int) -> PacketRecord:
        k = self.key
        src, sport, dst, dport = (
            (k.client_ip, k.client_port, k.server_ip, k.server_port) if outgoing
            else (k.server_ip, k.server_port, k.client_ip, k.client_port)
        )
        pkt = PacketRecord(round(t, 6), src, dst, sport, dport, Protocol.TCP, size,
                           frozenset(flags), self.seq[outgoing], payload)
        self.packets.append(pkt)
        self.seq[outgoing] += payload
        return pkt

    def run(self, t: float, sizes: Sequence[int]) -> float:
        gap = lambda: float(self.rng.uniform(*self.spec.packet_gap))  # noqa: E731
        self.emit(t, True, SYN_BYTES, {"SYN"}, 0)
        t += gap()
        self.emit(t, False, SYN_BYTES, {"SYN", "ACK"}, 0)
        t += gap()
        self.emit(t, True, HEADER_BYTES, {"ACK"}, 0)
        for v in sizes:
            t += gap()
            outgoing = v > 0
            pkt = self.emit(t, outgoing, abs(v), {"ACK", "PSH"}, abs(v) - HEADER_BYTES)
            if self.rng.random() < self.spec.retransmit_prob:
                t += gap()
                self.packets.append(replace(pkt, timestamp=round(t, 6)))
            if self.rng.random() < self.spec.ack_prob:
                t += gap()
                self.emit(t, not outgoing, HEADER_BYTES, {"ACK"}, 0)
        for outgoing, flags in ((True, {"FIN", "ACK"}), (False, {"ACK"}), (False, {"FIN", "ACK"}), (True, {"ACK"})):
            t += gap()
            self.emit(t, outgoing, HEADER_BYTES, flags, 0)
        return t


def _jittered(rng: np.random.Generator, base: Sequence[int], jitter: int) -> list[int]:
    if jitter == 0:
        return list(base)
    noise = rng.integers(-jitter, jitter + 1, size=len(base))
    out = []
    for v, e in zip(base, noise):
        mag = min(MTU_FRAME, max(HEADER_BYTES + 1, abs(v) + int(e)))
        out.append(mag if v > 0 else -mag)
    return out


def _noise_series(rng: np.random.Generator) -> list[int]:
    n = int(rng.integers(3, 11))
    mags = rng.integers(HEADER_BYTES + 1, MTU_FRAME + 1, size=n)
    signs = rng.choice([-1, 1], size=n)
    return [int(m * s) for m, s in zip(mags, signs)]


def generate(spec: ScenarioSpec) -> Scenario:
    """Realise a scenario; deterministic for a fixed ``spec.seed``.

    Each account runs ``sequences_per_account`` sequences, a sequence being
    every template once in a random order.  Consecutive windows are
    separated by ``window_gap`` seconds of silence.
    """
    rng = np.random.default_rng(spec.seed)
    owners = owner_map()
    pools = {owner: [str(h) for h in itertools.islice(ipaddress.IPv4Network(cidr).hosts(), 32)]
             for owner, cidr in OWNER_PREFIXES.items()}
    packets: list[PacketRecord] = []
    labels: list[LabelEntry] = []
    port = 40000
    t = spec.start_time
    n_windows = emitted = dropped = 0

    def next_port() -> int:
        nonlocal port
        port = 40000 if port >= 60999 else port + 1
        return port

    def session(start: float, owner: str, sizes: Sequence[int]) -> tuple[FlowKey, float, list[PacketRecord]]:
        server = pools[owner][int(rng.integers(0, len(pools[owner])))]
        key = FlowKey(spec.device_ip, next_port(), server, 443)
        s = _Session(rng, spec, key)
        end = s.run(start, sizes)
        return key, end, s.packets

    for a in range(spec.accounts):
        account = account_name(a)
        for _ in range(spec.sequences_per_account):
            for ti in rng.permutation(len(spec.templates)):
                tmpl = spec.templates[int(ti)]
                wid = f"w{n_windows:05d}"
                n_windows += 1
                window_end = t
                window_labels = []
                jobs = []
                for ft in tmpl.flow_templates:
                    if rng.random() < ft.drop_prob:
                        dropped += 1
                        continue
                    jobs.append((ft.owner, _jittered(rng, ft.base, ft.jitter)))
                for _ in range(int(rng.poisson(spec.noise_flow_rate)) if spec.noise_flow_rate else 0):
                    jobs.append((NOISE_OWNER, _noise_series(rng)))
                for owner, sizes in jobs:
                    start = round(t + float(rng.uniform(0, tmpl.window_duration)), 6)
                    key, end, pkts = session(start, owner, sizes)
                    packets.extend(pkts)
                    window_end = max(window_end, end)
                    window_labels.append(LabelEntry(pkts[0].timestamp, key, tmpl.label, account, wid))
                    if owner != NOISE_OWNER:
                        emitted += 1
                if not window_labels:
                    window_labels.append(LabelEntry(round(t, 6), None, tmpl.label, account, wid))
                labels.extend(sorted(window_labels, key=lambda e: e.flow_start))
                t = window_end + spec.window_gap

    packets.sort(key=lambda p: p.timestamp)
    return Scenario(packets, labels, owners, n_windows, emitted, dropped)


# Built-in scenarios --------------------------------------------------------

# Ten further archetypes beside the example flows; shapes differ in length,
# direction pattern and magnitudes.
EXTRA_ARCHETYPES: tuple[tuple[int, ...], ...] = (
    (517, -1514, -1514, -1514, -1514, -890, 97, -97),
    (340, -140, 1514, 1514, 1514, 1020, -85),
    (233, -233, 233, -233, 233, -233, 233),
    (145, -1380, 145, -1380, 90, -640),
    (820, 820, -64, 820, -64, 820, 410, -64, -1100),
    (400, -700, -700, 95, -1200, 60, -950, 300, -450, -450, 1250),
    (1190, -75, -75),
    (612, -1514, 250, -1514, 250, -1514, 250, -1514, 250, -300, 88),
    (96, 96, 96, -1460, -1460, 1460, 96, -320),
    (705, -510, -1240, 330, -880, -140, 1514, -1514, 650, -200, 160, -1300, 540, 70),
)

ARCHETYPES: tuple[tuple[int, ...], ...] = TABLE1_FLOWS + EXTRA_ARCHETYPES

# The 13 lines {i, i+1, i+3, i+9} mod 13 of the projective plane of order 3:
# any two share exactly one point, so any two templates differ in six flows.
ACTION_LINES = tuple(tuple(sorted((i + d) % 13 for d in (0, 1, 3, 9))) for i in range(13))

ACCEPTANCE_ACTIONS = (
    "send message", "post user status", "open user profile",
    "open message", "status button", "post on wall",
)


def table1_scenario(seed: int = 0, **overrides) -> ScenarioSpec:
    """One action whose window holds the three example flows verbatim."""
    flows = tuple(FlowTemplate(f) for f in TABLE1_FLOWS)
    tmpl = ActionTemplate("example", flows)
    return ScenarioSpec((tmpl,), accounts=1, seed=seed, **overrides)


def acceptance_scenario(seed: int = 2014, jitter: int = 40, drop_prob: float = 0.1,
                        noise_flow_rate: float = 2.0, accounts: int = 10,
                        sequences_per_account: int = 17) -> ScenarioSpec:
    """Six actions plus three ``other`` behaviours over 13 archetypes.

    Nine templates x 17 sequences x 10 accounts = 1530 windows.
    """
    def flows(line):
        return tuple(
            FlowTemplate(ARCHETYPES[p], jitter, drop_prob, CDN_OWNER if p % 4 == 3 else APP_OWNER)
            for p in line
        )

    labels = list(ACCEPTANCE_ACTIONS) + ["other"] * 3
    templates = tuple(ActionTemplate(lab, flows(line), 2.0) for lab, line in zip(labels, ACTION_LINES))
    return ScenarioSpec(templates, accounts=accounts, sequences_per_account=sequences_per_account,
                        noise_flow_rate=noise_flow_rate, seed=seed)


def planted_scenario(n_archetypes: int = 6, seed: int = 5, jitter: int = 20, accounts: int = 3,
                     sequences_per_account: int = 12) -> ScenarioSpec:
    """One action per archetype, each window a single flow of that archetype."""
    templates = tuple(
        ActionTemplate(f"action{i}", (FlowTemplate(ARCHETYPES[i], jitter),), 1.0)
        for i in range(n_archetypes)
    )
    return ScenarioSpec(templates, accounts=accounts, sequences_per_account=sequences_per_account, seed=seed)


PRESETS = {
    "table1": table1_scenario,
    "acceptance": acceptance_scenario,
    "planted": planted_scenario,
}


# Scenario files --------------------------------------------------------------

def parse_scenario(data: dict) -> ScenarioSpec:
    """Build a ScenarioSpec from a parsed scenario TOML document.

    Either ``preset = "<name>"`` (other top-level keys override) or an
    explicit ``[[templates]]`` list whose ``flows`` entries give ``base`` or
    ``archetype`` (a key of the ``[archetypes]`` table).
    """
    top = {k: v for k, v in data.items() if k not in ("templates", "archetypes", "preset")}
    if "packet_gap" in top:
        top["packet_gap"] = tuple(top["packet_gap"])
    if "preset" in data:
        name = data["preset"]
        if name not in PRESETS:
            raise ValueError(f"unknown scenario preset {name!r}; known: {sorted(PRESETS)}")
        accepted = inspect.signature(PRESETS[name]).parameters
        args = {k: top.pop(k) for k in list(top) if k in accepted}
        spec = PRESETS[name](**args)
        return replace(spec, **top)

    archetypes = {k: tuple(v) for k, v in data.get("archetypes", {}).items()}
    templates = []
    for t in data.get("templates", []):
        fts = []
        for f in t["flows"]:
            base = f["base"] if "base" in f else archetypes[f["archetype"]]
            fts.append(FlowTemplate(tuple(base), int(f.get("jitter", 0)), float(f.get("drop_prob", 0.0)),
                                    f.get("owner", APP_OWNER)))
        templates.append(ActionTemplate(t["label"], tuple(fts), float(t.get("window_duration", 2.0))))
    return ScenarioSpec(tuple(templates), **top)


def load_scenario(path) -> ScenarioSpec:
    with open(path, "rb") as fh:
        return parse_scenario(tomli.load(fh))


def default_split(n_accounts: int) -> tuple[list[str], list[str]]:
    """(test, validation) accounts: the last fifth each, at least one."""
    names = [account_name(i) for i in range(n_accounts)]
    n = max(1, n_accounts // 5)
    return names[-n:], names[-2 * n:-n]


def write_scenario(scenario: Scenario, spec: ScenarioSpec, out_dir, distance_preset: str = "facebook-conf3",
                   k_range: Optional[tuple[int, int]] = None) -> dict[str, Path]:
    """Write capture, sidecar, owner map and a matching experiment config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "capture": out / "capture.csv",
        "labels": out / "labels.csv",
        "owners": out / "owners.csv",
        "config": out / "experiment.toml",
    }
    paths["capture"].write_text(scenario.capture_csv(), encoding="utf-8")
    paths["labels"].write_text(scenario.labels_csv(), encoding="utf-8")
    paths["owners"].write_text(scenario.owners_csv(), encoding="utf-8")
    test, val = default_split(spec.accounts)
    lo, hi = k_range or (4, 24)

    def lst(xs):
        return "[" + ", ".join(f'"{x}"' for x in xs) + "]"

    paths["config"].write_text(
        f"seed = {spec.seed}\n"
        'output_dir = "results"\n\n'
        "[input]\n"
        'captures = ["capture.csv"]\n'
        'labels = ["labels.csv"]\n'
        'owner_map = "owners.csv"\n'
        f"target_owners = {lst(TARGET_OWNERS)}\n"
        f'device_ip = "{spec.device_ip}"\n'
        f"timeout = {DEFAULT_TIMEOUT}\n\n"
        "[distance]\n"
        f'preset = "{distance_preset}"\n\n'
        "[clusters]\n"
        f"k_range = [{lo}, {hi}]\n\n"
        "[forest]\n"
        "n_estimators = 40\n"
        "bootstrap = true\n\n"
        "[split]\n"
        f"test_accounts = {lst(test)}\n"
        f"validation_accounts = {lst(val)}\n",
        encoding="utf-8",
    )
    return paths


__all__ = [
    "ARCHETYPES", "ActionTemplate", "FlowTemplate", "Scenario", "ScenarioSpec", "TABLE1_FLOWS",
    "acceptance_scenario", "generate", "load_scenario", "owner_map", "parse_scenario",
    "planted_scenario", "table1_scenario", "write_scenario",
]
