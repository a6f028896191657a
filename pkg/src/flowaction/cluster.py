"""Weighted multi-series flow distance, average-linkage clustering, leaders.

A :class:`DistanceConfig` lists *views*: (weight, series type, packet
interval).  The distance between two flows is the weighted sum of DTW
costs of their sliced series, one term per view.  Training flows are
clustered agglomeratively with average linkage; every cluster elects the
member with the smallest summed distance to the others as its leader, and
unseen flows are assigned to the nearest leader.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numba
import numpy as np

from .dtw import _dtw_kernel
from .ingest import Flow
from .series import Interval, SeriesType, complete_series, slice_interval, split_complete

logger = logging.getLogger(__name__)

# numba probes TBB on first parallel launch and warns when it is too old
warnings.filterwarnings("ignore", message="The TBB threading layer", category=numba.NumbaWarning)

MODEL_FORMAT = "flowaction-cluster-model"
MODEL_VERSION = 1

FlowLike = Union[Flow, Sequence[int]]


@dataclass(frozen=True)
class View:
    weight: float
    series_type: SeriesType
    interval: Interval

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("view weight must be positive")

    def extract(self, complete: Sequence[int]) -> list[int]:
        return slice_interval(split_complete(complete, self.series_type), self.interval)

    def to_dict(self) -> dict:
        return {
            "weight": self.weight,
            "series": self.series_type.value,
            "interval": [self.interval.x, self.interval.y],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "View":
        x, y = d["interval"]
        return cls(float(d["weight"]), SeriesType.parse(d["series"]), Interval(int(x), int(y)))


@dataclass(frozen=True)
class DistanceConfig:
    views: tuple[View, ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        if not self.views:
            raise ValueError("distance configuration needs at least one view")

    def to_dict(self) -> dict:
        return {"name": self.name, "views": [v.to_dict() for v in self.views]}

    @classmethod
    def from_dict(cls, d: dict) -> "DistanceConfig":
        return cls(tuple(View.from_dict(v) for v in d["views"]), d.get("name", "custom"))

    @classmethod
    def from_rows(cls, name: str, rows: Sequence[tuple[float, Optional[tuple], Optional[tuple], Optional[tuple]]]):
        """Build from table rows ``(weight, in, out, complete)``.

        Every interval present on a row becomes one view carrying the row's
        weight; ``None`` marks an unused series type.
        """
        kinds = (SeriesType.INCOMING, SeriesType.OUTGOING, SeriesType.COMPLETE)
        views = []
        for weight, *intervals in rows:
            for kind, iv in zip(kinds, intervals):
                if iv is not None:
                    views.append(View(weight, kind, Interval(*iv)))
        return cls(tuple(views), name)


PRESETS: dict[str, DistanceConfig] = {
    cfg.name: cfg
    for cfg in (
        DistanceConfig.from_rows("gmail-conf1", [(0.80, (1, 4), (1, 2), (1, 6)), (0.20, (1, 6), (1, 3), (1, 9))]),
        DistanceConfig.from_rows("gmail-conf2", [(0.66, (1, 4), (1, 2), (1, 6)), (0.33, (1, 6), (1, 3), (1, 9))]),
        DistanceConfig.from_rows("gmail-conf3", [(0.33, (1, 4), (1, 2), (1, 6)), (0.66, (1, 6), (1, 3), (1, 9))]),
        DistanceConfig.from_rows("facebook-conf1", [(0.66, (1, 3), (1, 5), (1, 7)), (0.33, (1, 6), (1, 7), (1, 12))]),
        DistanceConfig.from_rows("facebook-conf2", [(0.33, (1, 3), (1, 5), (1, 7)), (0.66, (1, 6), (1, 7), (1, 12))]),
        DistanceConfig.from_rows("facebook-conf3", [(0.20, (1, 3), (1, 5), (1, 7)), (0.80, (1, 6), (1, 7), (1, 12))]),
        DistanceConfig.from_rows("twitter-conf1", [(0.95, None, None, (7, 10)), (0.05, None, None, (1, 10))]),
        DistanceConfig.from_rows("twitter-conf2", [(0.95, None, None, (8, 11)), (0.05, None, None, (1, 11))]),
        DistanceConfig.from_rows("twitter-conf3", [(0.95, None, None, (8, 10)), (0.05, None, None, (1, 10))]),
    )
}


def _complete(obj: FlowLike) -> list[int]:
    return complete_series(obj) if isinstance(obj, Flow) else [int(v) for v in obj]


def flow_distance(a: FlowLike, b: FlowLike, cfg: DistanceConfig) -> float:
    ca, cb = _complete(a), _complete(b)
    total = 0.0
    for view in cfg.views:
        xa = np.asarray(view.extract(ca), dtype=np.float64)
        xb = np.asarray(view.extract(cb), dtype=np.float64)
        total += view.weight * _dtw_kernel(xa, xb)
    return float(total)


# Packed series and batch kernels ----------------------------------------

@dataclass
class PackedSeries:
    """Sliced series of many flows for every view, in one flat buffer."""

    data: np.ndarray      # float64, concatenated slices
    starts: np.ndarray    # int64 (n_views, n_flows)
    lengths: np.ndarray   # int64 (n_views, n_flows)
    weights: np.ndarray   # float64 (n_views,)

    @classmethod
    def build(cls, completes: Sequence[Sequence[int]], cfg: DistanceConfig) -> "PackedSeries":
        nv, n = len(cfg.views), len(completes)
        starts = np.zeros((nv, n), dtype=np.int64)
        lengths = np.zeros((nv, n), dtype=np.int64)
        chunks, pos = [], 0
        for v, view in enumerate(cfg.views):
            for i, c in enumerate(completes):
                s = view.extract(c)
                starts[v, i], lengths[v, i] = pos, len(s)
                chunks.extend(s)
                pos += len(s)
        data = np.asarray(chunks, dtype=np.float64)
        weights = np.asarray([v.weight for v in cfg.views], dtype=np.float64)
        return cls(data, starts, lengths, weights)

    def __len__(self) -> int:
        return self.starts.shape[1]


@numba.njit(cache=True)
def _pair(da, sa, la, i, db, sb, lb, j, weights):
    total = 0.0
    for v in range(weights.shape[0]):
        x = da[sa[v, i]:sa[v, i] + la[v, i]]
        y = db[sb[v, j]:sb[v, j] + lb[v, j]]
        total += weights[v] * _dtw_kernel(x, y)
    return total


@numba.njit(parallel=True, cache=True)
def _pairwise_kernel(data, starts, lengths, weights, out):
    n = starts.shape[1]
    for i in numba.prange(n):
        for j in range(i + 1, n):
            d = _pair(data, starts, lengths, i, data, starts, lengths, j, weights)
            out[i, j] = d
            out[j, i] = d


@numba.njit(parallel=True, cache=True)
def _cross_kernel(da, sa, la, db, sb, lb, weights, out):
    for i in numba.prange(sa.shape[1]):
        for j in range(sb.shape[1]):
            out[i, j] = _pair(da, sa, la, i, db, sb, lb, j, weights)


def set_jobs(jobs: Optional[int]) -> None:
    """Bound the worker threads used by the distance kernels."""
    if jobs:
        numba.set_num_threads(max(1, min(int(jobs), numba.config.NUMBA_NUM_THREADS)))


def distance_matrix(flows: Sequence[FlowLike], cfg: DistanceConfig) -> np.ndarray:
    """Symmetric matrix of :func:`flow_distance` over all pairs."""
    packed = PackedSeries.build([_complete(f) for f in flows], cfg)
    out = np.zeros((len(packed), len(packed)), dtype=np.float64)
    if len(packed) > 1:
        _pairwise_kernel(packed.data, packed.starts, packed.lengths, packed.weights, out)
    return out


def cross_distances(flows: Sequence[FlowLike], others: Sequence[FlowLike], cfg: DistanceConfig) -> np.ndarray:
    a = PackedSeries.build([_complete(f) for f in flows], cfg)
    b = PackedSeries.build([_complete(f) for f in others], cfg)
    out = np.zeros((len(a), len(b)), dtype=np.float64)
    if len(a) and len(b):
        _cross_kernel(a.data, a.starts, a.lengths, b.data, b.starts, b.lengths, a.weights, out)
    return out


# Agglomerative clustering ------------------------------------------------

def linkage_distance(u: Iterable[int], v: Iterable[int], d) -> float:
    """Average linkage: mean of all cross-cluster pairwise distances."""
    u, v = list(u), list(v)
    d = np.asarray(d)
    return float(d[np.ix_(u, v)].sum() / (len(u) * len(v)))


@dataclass(frozen=True)
class Merge:
    """Clusters labelled by their smallest member; ``a < b``."""

    a: int
    b: int
    distance: float
    size: int


def linkage_tree(d) -> list[Merge]:
    """Full average-linkage merge sequence (n - 1 merges).

    At every step the closest pair of clusters is merged; ties go to the
    lexicographically smallest (min member of one, min member of the
    other).  Distances to the merged cluster follow the Lance-Williams
    update for average linkage.
    """
    D = np.array(d, dtype=np.float64, copy=True)
    n = D.shape[0]
    if D.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n < 2:
        return []
    np.fill_diagonal(D, np.inf)
    size = np.ones(n, dtype=np.float64)
    active = np.ones(n, dtype=bool)

    # nearest neighbour of each row among higher-indexed active rows
    row_min = np.full(n, np.inf)
    row_arg = np.full(n, -1, dtype=np.int64)

    def refresh(r: int) -> None:
        tail = D[r, r + 1:]
        if tail.size:
            j = int(np.argmin(tail))
            row_min[r], row_arg[r] = tail[j], r + 1 + j
        else:
            row_min[r], row_arg[r] = np.inf, -1

    for r in range(n):
        refresh(r)

    merges = []
    for _ in range(n - 1):
        a = int(np.argmin(row_min))
        b = int(row_arg[a])
        dist = float(row_min[a])
        sa, sb = size[a], size[b]
        new = (sa * D[a] + sb * D[b]) / (sa + sb)
        D[a, :] = new
        D[:, a] = new
        D[b, :] = np.inf
        D[:, b] = np.inf
        D[a, a] = np.inf
        size[a] = sa + sb
        active[b] = False
        row_min[b], row_arg[b] = np.inf, -1
        merges.append(Merge(a, b, dist, int(sa + sb)))

        refresh(a)
        stale = np.flatnonzero(active & ((row_arg == b) | ((row_arg == a) & (np.arange(n) < a))))
        for r in stale:
            refresh(int(r))
        # rows above a whose nearest neighbour may now be the merged cluster
        upper = np.flatnonzero(active[:a])
        if upper.size:
            vals = D[upper, a]
            better = (vals < row_min[upper]) | ((vals == row_min[upper]) & (a < row_arg[upper]))
            hit = upper[better]
            row_min[hit] = vals[better]
            row_arg[hit] = a
    return merges


def partition_from_merges(n: int, merges: Sequence[Merge], k: int) -> list[list[int]]:
    """Apply the first ``n - k`` merges; clusters sorted by smallest member."""
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m in merges[: n - k]:
        ra, rb = find(m.a), find(m.b)
        parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups)]


def agglomerate(d, k: int) -> list[list[int]]:
    n = np.asarray(d).shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    return partition_from_merges(n, linkage_tree(d)[: n - k], k)


def elect_leader(cluster: Sequence[int], d) -> int:
    """Member with minimal summed distance to the cluster; ties -> smallest index."""
    members = sorted(cluster)
    if not members:
        raise ValueError("empty cluster")
    sums = np.asarray(d)[np.ix_(members, members)].sum(axis=1)
    return members[int(np.argmin(sums))]


# Models -------------------------------------------------------------------

@dataclass
class ClusterModel:
    config: DistanceConfig
    k: int
    leaders: list[list[int]]          # complete series of each leader
    leader_index: list[int]           # training-flow index of each leader
    membership: list[int] = field(default_factory=list)
    _packed: Optional[PackedSeries] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.k < 1 or len(self.leaders) != self.k:
            raise ValueError("cluster model needs k >= 1 leaders")

    def _leader_pack(self) -> PackedSeries:
        if self._packed is None:
            self._packed = PackedSeries.build(self.leaders, self.config)
        return self._packed

    def distances(self, flows: Sequence[FlowLike]) -> np.ndarray:
        a = PackedSeries.build([_complete(f) for f in flows], self.config)
        b = self._leader_pack()
        out = np.zeros((len(a), self.k), dtype=np.float64)
        if len(a):
            _cross_kernel(a.data, a.starts, a.lengths, b.data, b.starts, b.lengths, a.weights, out)
        return out

    def assign_many(self, flows: Sequence[FlowLike]) -> list[int]:
        if not flows:
            return []
        # argmin keeps the first (lowest cluster id) on ties
        return [int(c) for c in np.argmin(self.distances(flows), axis=1)]

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "config": self.config.to_dict(),
            "k": self.k,
            "leaders": self.leaders,
            "leader_index": self.leader_index,
            "membership": self.membership,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ValueError("not a supported cluster model file")
        return cls(
            config=DistanceConfig.from_dict(d["config"]),
            k=int(d["k"]),
            leaders=[[int(v) for v in s] for s in d["leaders"]],
            leader_index=[int(i) for i in d["leader_index"]],
            membership=[int(c) for c in d["membership"]],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ClusterModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def assign(flow: FlowLike, model: ClusterModel) -> int:
    return model.assign_many([flow])[0]


class Hierarchy:
    """Distance matrix and merge tree of a training set, cut at any k."""

    def __init__(self, flows: Sequence[FlowLike], cfg: DistanceConfig):
        self.config = cfg
        self.completes = [_complete(f) for f in flows]
        if not self.completes:
            raise ValueError("no training flows to cluster")
        logger.info("computing %d x %d flow distance matrix", len(self.completes), len(self.completes))
        self.matrix = distance_matrix(self.completes, cfg)
        self.merges = linkage_tree(self.matrix)

    def __len__(self) -> int:
        return len(self.completes)

    def model(self, k: int) -> ClusterModel:
        clusters = partition_from_merges(len(self), self.merges, k)
        membership = [0] * len(self)
        leader_index = []
        for cid, members in enumerate(clusters):
            for i in members:
                membership[i] = cid
            leader_index.append(elect_leader(members, self.matrix))
        return ClusterModel(
            config=self.config,
            k=k,
            leaders=[list(self.completes[i]) for i in leader_index],
            leader_index=leader_index,
            membership=membership,
        )


def fit_clusters(flows: Sequence[FlowLike], cfg: DistanceConfig, k: int) -> ClusterModel:
    return Hierarchy(flows, cfg).model(k)
