"""Action windows and per-cluster flow-count feature vectors."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .cluster import ClusterModel
from .ingest import Flow, LabelEntry, match_labels

logger = logging.getLogger(__name__)

OTHER = "other"


@dataclass
class ActionWindow:
    label: str
    account: str
    start: float
    end: float
    flows: list[Flow] = field(default_factory=list)
    window_id: Optional[str] = None

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("window start after end")


@dataclass(frozen=True)
class ActionInstance:
    label: str
    account: str
    features: tuple[int, ...]
    window_id: Optional[str] = None


def build_instance(window: ActionWindow, model: ClusterModel) -> ActionInstance:
    counts = [0] * model.k
    if window.flows:
        for c in model.assign_many(window.flows):
            counts[c] += 1
    else:
        logger.debug("window %s has no flows", window.window_id)
    return ActionInstance(window.label, window.account, tuple(counts), window.window_id)


def build_dataset(windows: Sequence[ActionWindow], model: ClusterModel) -> list[ActionInstance]:
    # one batched assignment for all flows, then split back per window
    flows = [f for w in windows for f in w.flows]
    assigned = iter(model.assign_many(flows))
    out = []
    for w in windows:
        counts = [0] * model.k
        for _ in w.flows:
            counts[next(assigned)] += 1
        out.append(ActionInstance(w.label, w.account, tuple(counts), w.window_id))
    return out


def windows_from_labels(
    flows: Sequence[Flow],
    entries: Sequence[LabelEntry],
    known_labels: Optional[set[str]] = None,
    gap: float = 4.5,
) -> list[ActionWindow]:
    """Group labelled flows into action windows.

    ``flows`` should already be filtered; flows without a sidecar entry are
    ignored.  Windows come from the sidecar ``window_id`` column; without
    it, entries of one account/label are split whenever consecutive flow
    starts are more than ``gap`` seconds apart.  Labels outside
    ``known_labels`` (when given) are mapped to ``other``.
    """
    def window_of(e: LabelEntry, auto: dict) -> str:
        return e.window_id if e.window_id is not None else auto[id(e)]

    auto: dict[int, str] = {}
    if any(e.window_id is None for e in entries):
        last: dict[tuple[str, str], tuple[float, str]] = {}
        counter = 0
        for e in sorted((e for e in entries if e.window_id is None), key=lambda e: e.flow_start):
            key = (e.account_id, e.action_label)
            prev = last.get(key)
            if prev is None or e.flow_start - prev[0] > gap:
                counter += 1
                wid = f"auto{counter}"
            else:
                wid = prev[1]
            last[key] = (e.flow_start, wid)
            auto[id(e)] = wid

    windows: dict[str, ActionWindow] = {}
    for e in sorted(entries, key=lambda e: e.flow_start):
        wid = window_of(e, auto)
        label = e.action_label
        if known_labels is not None and label not in known_labels:
            label = OTHER
        w = windows.get(wid)
        if w is None:
            windows[wid] = ActionWindow(label, e.account_id, e.flow_start, e.flow_start, window_id=wid)
        elif w.account != e.account_id:
            raise ValueError(f"window {wid} mixes accounts {w.account} and {e.account_id}")

    for i, e in sorted(match_labels(flows, entries).items()):
        w = windows[window_of(e, auto)]
        flow = flows[i]
        flow.label, flow.account = w.label, w.account
        w.flows.append(flow)

    for w in windows.values():
        if w.flows:
            w.start = min(w.start, min(f.start_time for f in w.flows))
            w.end = max(w.end, max(f.end_time for f in w.flows))
        w.flows.sort(key=lambda f: (f.start_time, f.key))
    return sorted(windows.values(), key=lambda w: (w.start, str(w.window_id)))


def format_dataset(instances: Sequence[ActionInstance], k: int) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label", "account"] + [f"f{i}" for i in range(k)])
    for inst in instances:
        writer.writerow([inst.label, inst.account, *inst.features])
    return out.getvalue()


def parse_dataset(text: str) -> list[ActionInstance]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["label", "account"]:
        raise ValueError("dataset header must start with label,account")
    k = len(rows[0]) - 2
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != k + 2:
            raise ValueError(f"line {n}: expected {k + 2} fields")
        out.append(ActionInstance(row[0], row[1], tuple(int(v) for v in row[2:])))
    return out
