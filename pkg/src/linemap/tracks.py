"""Grouping per-detection 3D hypotheses into multi-view line tracks.

Detections are graph nodes keyed by ``(image id, segment index)``; 2D match
edges are kept only where the two endpoints' best 3D hypotheses score as
consistent.  Connected components become tracks, each refit by a principal
line through all member endpoints.  The track extent discards the two
outermost projections on each side (robust against spurious long members),
and a stricter second merging pass joins duplicate tracks that the match
graph failed to connect.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraView, PluckerLine, Segment3D
from .scoring import ScoringConfig, track_pair_score

Node = tuple[int, int]  # (image id, segment index)


@dataclass(frozen=True)
class TrackCandidate:
    """Best 3D hypothesis of one 2D detection."""

    segment: Segment3D
    source: str = "algebraic"


@dataclass
class LineTrack:
    segment: Segment3D
    supports: list[Node]
    source_counts: dict[str, int] = field(default_factory=dict)

    @property
    def image_ids(self) -> set[int]:
        return {img for img, _ in self.supports}


@dataclass(frozen=True)
class TrackConfig:
    edge_score_min: float = 0.5
    min_supports: int = 3
    min_images: int = 4
    remerge: bool = True
    remerge_score_min: float = 0.75


class _Union:
    def __init__(self, items):
        self.parent = {x: x for x in items}

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def fit_segment_to_endpoints(endpoints: np.ndarray) -> Segment3D | None:
    """Principal line through a set of endpoints, trimmed robustly.

    The line is the mean plus the dominant eigenvector of the endpoint
    scatter.  The extent keeps the third-outermost projection on each side
    when six or more endpoints are available, otherwise the full span.
    Returns None when the points do not define a direction or the trimmed
    extent collapses.
    """
    pts = np.asarray(endpoints, dtype=np.float64)
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 1e-12 * max(1.0, float(np.abs(pts).max()) ** 2):
        return None
    d = evecs[:, -1]
    ts = np.sort(centered @ d)
    if ts.size >= 6:
        lo, hi = ts[2], ts[-3]
    else:
        lo, hi = ts[0], ts[-1]
    if hi - lo <= 1e-12:
        return None
    return Segment3D(mean + lo * d, mean + hi * d)


def _refit(nodes: list[Node], candidates: dict[Node, TrackCandidate]) -> Segment3D | None:
    endpoints = np.concatenate([candidates[n].segment.endpoints() for n in nodes])
    return fit_segment_to_endpoints(endpoints)


def _make_track(nodes: list[Node], candidates: dict[Node, TrackCandidate]) -> LineTrack | None:
    seg = _refit(nodes, candidates)
    if seg is None:
        return None
    counts = Counter(candidates[n].source for n in nodes)
    return LineTrack(seg, sorted(nodes), dict(sorted(counts.items())))


def build_tracks(
    candidates: dict[Node, TrackCandidate],
    edges: list[tuple[Node, Node]],
    views: dict[int, CameraView],
    config: TrackConfig = TrackConfig(),
    scoring: ScoringConfig = ScoringConfig(),
) -> list[LineTrack]:
    """Cluster per-detection hypotheses into 3D line tracks.

    Args:
        candidates: accepted best hypothesis per detection node.
        edges: 2D match edges between detection nodes (any direction).
        views: camera of each image id.
        config: clustering thresholds.
        scoring: pairwise score parameters used for edge verification.
    """
    nodes = sorted(candidates.keys())
    uf = _Union(nodes)
    seen = set()
    for a, b in edges:
        if a not in candidates or b not in candidates or a == b:
            continue
        key = (a, b) if a <= b else (b, a)
        if key in seen:
            continue
        seen.add(key)
        s = track_pair_score(
            candidates[a].segment,
            views[a[0]],
            candidates[b].segment,
            views[b[0]],
            scoring,
        )
        if s >= config.edge_score_min:
            uf.union(a, b)

    components: dict[Node, list[Node]] = {}
    for n in nodes:
        components.setdefault(uf.find(n), []).append(n)

    tracks: list[LineTrack] = []
    for root in sorted(components):
        comp = sorted(components[root])
        if len(comp) < config.min_supports:
            continue
        track = _make_track(comp, candidates)
        if track is not None:
            tracks.append(track)

    if config.remerge and len(tracks) > 1:
        tracks = remerge_tracks(tracks, candidates, views, config, scoring)

    tracks = [t for t in tracks if len(t.image_ids) >= config.min_images]
    tracks.sort(key=lambda t: t.supports[0])
    return tracks


def remerge_tracks(
    tracks: list[LineTrack],
    candidates: dict[Node, TrackCandidate],
    views: dict[int, CameraView],
    config: TrackConfig,
    scoring: ScoringConfig,
) -> list[LineTrack]:
    """Second-pass merging of duplicate tracks under a stricter threshold.

    Tracks are compared through their refit segments, each represented by
    the view of its first support; qualifying pairs are united greedily by
    descending score and the merged groups refit from scratch.
    """
    rep = [views[t.supports[0][0]] for t in tracks]
    pairs = []
    for i in range(len(tracks)):
        for j in range(i + 1, len(tracks)):
            s = track_pair_score(tracks[i].segment, rep[i], tracks[j].segment, rep[j], scoring)
            if s >= config.remerge_score_min:
                pairs.append((s, i, j))
    if not pairs:
        return tracks
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    uf = _Union(range(len(tracks)))
    for _, i, j in pairs:
        uf.union(i, j)

    groups: dict[int, list[int]] = {}
    for i in range(len(tracks)):
        groups.setdefault(uf.find(i), []).append(i)

    merged: list[LineTrack] = []
    for root in sorted(groups):
        idxs = groups[root]
        if len(idxs) == 1:
            merged.append(tracks[idxs[0]])
            continue
        nodes = sorted({n for i in idxs for n in tracks[i].supports})
        track = _make_track(nodes, candidates)
        if track is not None:
            merged.append(track)
    return merged
