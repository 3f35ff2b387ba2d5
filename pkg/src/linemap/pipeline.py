"""End-to-end mapping: detections and matches in, 3D line tracks out.

Stages: neighbor selection, per-image vanishing point estimation and
point-segment association, per-detection proposal triangulation with
degeneracy rescue, consistency-scored selection, track clustering,
cross-image VP tracks, joint refinement, and 3D association graph
extraction.  Per-image work can run on a thread pool; results are merged
in image order so the output is identical regardless of thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .association import (
    VPTrack,
    associate_points_to_segments,
    build_vp_tracks,
    estimate_vps,
    vp_direction_world,
)
from .config import PipelineConfig
from .geometry import (
    CameraView,
    Segment2D,
    minimal_to_plucker,
    normalized,
    plucker_from_segment,
    plucker_to_minimal,
)
from .optimize import (
    JointProblem,
    extract_line_vp_edges,
    extract_point_line_edges,
    optimize,
    segment_on_line_from_supports,
    soft_line_vp_weights,
    soft_point_line_weights,
    vp_orthogonal_pairs,
)
from .scoring import selection_pair_score
from .tracks import LineTrack, TrackCandidate, build_tracks
from .triangulation import (
    DegenerateTriangulationError,
    TriangulationError,
    triangulate_algebraic,
    triangulate_line_point,
    triangulate_line_vp,
    triangulate_multipoint,
    weak_epipolar_iou,
)

__all__ = ["PipelineInput", "PipelineResult", "compute_neighbors", "run_pipeline"]

Node = tuple[int, int]


@dataclass
class PipelineInput:
    views: dict[int, CameraView]
    detections: dict[int, list[Segment2D]]
    matches: dict[int, list[list[Node]]] | None = None
    points3d: np.ndarray | None = None
    point_obs: dict[int, list[tuple[int, np.ndarray]]] = field(default_factory=dict)
    neighbors: dict[int, list[int]] | None = None


@dataclass
class PipelineResult:
    tracks: list[LineTrack]
    vp_tracks: list[VPTrack]
    point_line_edges: list[tuple[int, int]]  # (global point idx, track idx)
    line_vp_edges: list[tuple[int, int]]  # (track idx, vp track idx)
    points3d: np.ndarray | None
    stats: dict


def compute_neighbors(
    images: list[int],
    point_obs: dict[int, list[tuple[int, np.ndarray]]],
    n_neighbors: int,
) -> dict[int, list[int]]:
    """Rank other images by Dice overlap of observed point ids.

    Without point observations every pair scores zero and the ranking
    falls back to ascending image id.
    """
    sets = {img: {pi for pi, _ in point_obs.get(img, [])} for img in images}
    out = {}
    for img in images:
        scored = []
        for other in images:
            if other == img:
                continue
            a, b = sets[img], sets[other]
            denom = len(a) + len(b)
            dice = 2.0 * len(a & b) / denom if denom else 0.0
            scored.append((-dice, other))
        scored.sort()
        out[img] = [other for _, other in scored[:n_neighbors]]
    return out


def _vp_cam_direction(view: CameraView, vp: np.ndarray) -> np.ndarray:
    """Camera-frame 3D direction whose image vanishing point is ``vp``."""
    return normalized(np.linalg.solve(view.K, vp))


def _detection_proposals(
    img: int,
    di: int,
    kept: list[Node],
    data: PipelineInput,
    config: PipelineConfig,
    assoc_pts: list[np.ndarray],
    vp_cam: np.ndarray | None,
) -> list[tuple[TrackCandidate, int]]:
    """Triangulated hypotheses for one detection, tagged by generating image."""
    view = data.views[img]
    det = data.detections[img][di]
    proposals: list[tuple[TrackCandidate, int]] = []
    for j, dj in kept:
        mseg = data.detections[j][dj]
        mview = data.views[j]
        try:
            seg = triangulate_algebraic(det, view, mseg, mview, config.min_tri_angle_deg)
            proposals.append((TrackCandidate(seg, "algebraic"), j))
            continue
        except DegenerateTriangulationError:
            pass
        except TriangulationError:
            continue
        # degenerate ray/plane geometry: rescue with a point or a VP direction
        rescued = False
        for p in assoc_pts[:2]:
            try:
                seg = triangulate_line_point(det, view, mseg, mview, p)
            except TriangulationError:
                continue
            proposals.append((TrackCandidate(seg, "point"), j))
            rescued = True
            break
        if not rescued and vp_cam is not None:
            try:
                seg = triangulate_line_vp(det, view, mseg, mview, vp_cam)
                proposals.append((TrackCandidate(seg, "vp"), j))
            except TriangulationError:
                pass
    if len(assoc_pts) >= 2:
        try:
            seg = triangulate_multipoint(det, view, np.array(assoc_pts))
            proposals.append((TrackCandidate(seg, "point"), img))
        except TriangulationError:
            pass
    return proposals


def _select_best(
    proposals: list[tuple[TrackCandidate, int]],
    ref_view: CameraView,
    views: dict[int, CameraView],
    config: PipelineConfig,
    scoring,
) -> TrackCandidate | None:
    """Keep the proposal best supported by proposals from other images."""
    if not proposals:
        return None
    by_img: dict[int, list[int]] = {}
    for idx, (_, gen) in enumerate(proposals):
        by_img.setdefault(gen, []).append(idx)
    best_idx = -1
    best_score = -1.0
    for idx, (cand, gen) in enumerate(proposals):
        total = 0.0
        for j, others in by_img.items():
            if j == gen:
                continue
            m = 0.0
            for oi in others:
                s = selection_pair_score(
                    cand.segment,
                    proposals[oi][0].segment,
                    ref_view,
                    views[gen],
                    views[j],
                    scoring,
                )
                if s > m:
                    m = s
                    if m >= 1.0:
                        break
            total += m
        if total > best_score:
            best_score = total
            best_idx = idx
    if best_score >= config.accept_threshold:
        return proposals[best_idx][0]
    return None


def run_pipeline(data: PipelineInput, config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    views = data.views
    images = sorted(views)
    scoring = config.scoring_config()
    neighbors = data.neighbors or compute_neighbors(images, data.point_obs, config.n_neighbors)
    neighbor_sets = {img: set(neighbors.get(img, ())) for img in images}

    vp_models: dict[int, tuple[list[np.ndarray], np.ndarray]] = {}
    if config.use_vps:
        for img in images:
            vp_models[img] = estimate_vps(
                data.detections[img],
                inlier_px=config.vp_inlier_px,
                min_support=config.vp_min_support,
                max_models=config.vp_max_models,
                seed=config.seed,
            )

    assoc2d: dict[int, list[Node]] = {img: [] for img in images}
    if config.use_points and data.points3d is not None:
        for img in images:
            entries = data.point_obs.get(img, [])
            if not entries:
                continue
            xy = np.array([p for _, p in entries]).reshape(-1, 2)
            local = associate_points_to_segments(
                xy, data.detections[img], config.point_assoc_px
            )
            assoc2d[img] = [(entries[li][0], si) for li, si in local]

    def process(img: int):
        view = views[img]
        dets = data.detections[img]
        rows = data.matches.get(img, []) if data.matches else []
        vps, assign = vp_models.get(img, ([], np.full(len(dets), -1, dtype=int)))
        pts_by_det: dict[int, list[np.ndarray]] = {}
        for pi, si in assoc2d[img]:
            pts_by_det.setdefault(si, []).append(data.points3d[pi])
        accepted: dict[Node, TrackCandidate] = {}
        edges: list[tuple[Node, Node]] = []
        n_proposals = 0
        for di, det in enumerate(dets):
            row = rows[di] if di < len(rows) else []
            kept: list[Node] = []
            for j, dj in row:
                if j == img or j not in neighbor_sets[img]:
                    continue
                if len(kept) >= config.top_k_matches:
                    break
                iou = weak_epipolar_iou(det, view, data.detections[j][dj], views[j])
                if iou >= config.iou_min:
                    kept.append((j, dj))
            vp_cam = None
            if len(vps) and assign[di] >= 0:
                vp_cam = _vp_cam_direction(view, vps[assign[di]])
            proposals = _detection_proposals(
                img, di, kept, data, config, pts_by_det.get(di, []), vp_cam
            )
            n_proposals += len(proposals)
            best = _select_best(proposals, view, views, config, scoring)
            if best is not None:
                node = (img, di)
                accepted[node] = best
                edges.extend((node, mn) for mn in kept)
        return accepted, edges, n_proposals

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            per_image = list(pool.map(process, images))
    else:
        per_image = [process(img) for img in images]

    candidates: dict[Node, TrackCandidate] = {}
    all_edges: list[tuple[Node, Node]] = []
    n_proposals = 0
    for accepted, edges, count in per_image:
        candidates.update(accepted)
        all_edges.extend(edges)
        n_proposals += count

    tracks = build_tracks(candidates, all_edges, views, config.track_config(), scoring)

    # cross-image VP tracks, linked by co-support of line tracks
    vp_tracks: list[VPTrack] = []
    if config.use_vps and tracks:
        directions = {}
        for img in images:
            vps, _ = vp_models[img]
            for k, vp in enumerate(vps):
                directions[(img, k)] = vp_direction_world(views[img], vp)
        shared: dict[tuple[Node, Node], int] = {}
        for t in tracks:
            nodes = set()
            for img, det in t.supports:
                _, assign = vp_models[img]
                if det < len(assign) and assign[det] >= 0:
                    nodes.add((img, int(assign[det])))
            for a in nodes:
                for b in nodes:
                    if a < b and a[0] != b[0]:
                        shared[(a, b)] = shared.get((a, b), 0) + 1
        vp_tracks = build_vp_tracks(
            directions,
            shared,
            min_shared=config.vp_track_min_shared,
            max_angle_deg=config.vp_track_max_angle_deg,
        )

    line_supports = [t.supports for t in tracks]
    pl_weights: list[tuple[int, int, float]] = []
    if config.use_points and data.points3d is not None and tracks:
        pl_weights = soft_point_line_weights(
            line_supports,
            {img: set(assoc2d[img]) for img in images},
            min_weight=config.soft_min_weight,
        )
    lv_weights: list[tuple[int, int, float]] = []
    if vp_tracks:
        lv_weights = soft_line_vp_weights(
            line_supports,
            [vt.members for vt in vp_tracks],
            {img: vp_models[img][1] for img in images},
            min_weight=config.soft_min_weight,
        )

    refined_points = None if data.points3d is None else np.array(data.points3d, copy=True)
    opt_stats = {}
    if config.optimize and tracks:
        pid_list = sorted({pt for pt, _, _ in pl_weights})
        pid_map = {pt: i for i, pt in enumerate(pid_list)}
        problem = JointProblem(
            views=views,
            points=(
                refined_points[pid_list] if pid_list else np.zeros((0, 3))
            ),
            lines=[plucker_to_minimal(plucker_from_segment(t.segment)) for t in tracks],
            vps=np.array([vt.direction for vt in vp_tracks]).reshape(-1, 3),
        )
        for img in images:
            for pi, xy in data.point_obs.get(img, []):
                if pi in pid_map:
                    problem.point_obs.append((pid_map[pi], img, xy))
        for ti, t in enumerate(tracks):
            for img, det in t.supports:
                problem.line_obs.append((ti, img, data.detections[img][det]))
        problem.point_line = [(pid_map[pt], li, w) for pt, li, w in pl_weights]
        problem.line_vp = [(li, vi, w) for li, vi, w in lv_weights]
        problem.vp_ortho = vp_orthogonal_pairs(problem.vps, config.ortho_angle_deg)
        result = optimize(problem, config.optimize_config())
        opt_stats = {
            "opt_initial_cost": result.initial_cost,
            "opt_final_cost": result.final_cost,
            "opt_iterations": result.iterations,
            "opt_termination": result.termination,
        }
        for ti, t in enumerate(tracks):
            line = minimal_to_plucker(result.lines[ti])
            seg = segment_on_line_from_supports(
                line, [(data.detections[i][d], views[i]) for i, d in t.supports]
            )
            if seg is not None:
                t.segment = seg
        for vi, vt in enumerate(vp_tracks):
            vt.direction = result.vps[vi]
        for pt, i in pid_map.items():
            refined_points[pt] = result.points[i]

    # 3D association graphs on the refined geometry
    point_line_edges: list[tuple[int, int]] = []
    if pl_weights:
        pid_list = sorted({pt for pt, _, _ in pl_weights})
        pid_map = {pt: i for i, pt in enumerate(pid_list)}
        pts = refined_points[pid_list]
        point_scales = np.zeros(len(pid_list))
        for i, pt in enumerate(pid_list):
            scales = []
            for img in images:
                for pj, _ in data.point_obs.get(img, []):
                    if pj == pt:
                        depth = views[img].depth(refined_points[pt])
                        if depth > 0:
                            scales.append(depth / views[img].focal)
            point_scales[i] = min(scales) if scales else 0.0
        lines = [plucker_from_segment(t.segment) for t in tracks]
        line_scales = np.array([_line_scale(t, views) for t in tracks])
        kept = extract_point_line_edges(
            pts,
            point_scales,
            lines,
            line_scales,
            [(pid_map[pt], li) for pt, li, _ in pl_weights],
            max_ratio=config.assoc3d_max_ratio,
        )
        point_line_edges = sorted((pid_list[i], li) for i, li in kept)
    line_vp_edges: list[tuple[int, int]] = []
    if lv_weights:
        lines = [plucker_from_segment(t.segment) for t in tracks]
        vdirs = np.array([vt.direction for vt in vp_tracks]).reshape(-1, 3)
        line_vp_edges = extract_line_vp_edges(
            lines,
            vdirs,
            [(li, vi) for li, vi, _ in lv_weights],
            max_angle_deg=config.assoc3d_max_angle_deg,
        )

    stats = {
        "images": len(images),
        "detections": sum(len(v) for v in data.detections.values()),
        "proposals": n_proposals,
        "accepted": len(candidates),
        "tracks": len(tracks),
        "vp_tracks": len(vp_tracks),
        "point_line_edges": len(point_line_edges),
        "line_vp_edges": len(line_vp_edges),
    }
    stats.update(opt_stats)
    return PipelineResult(
        tracks=tracks,
        vp_tracks=vp_tracks,
        point_line_edges=point_line_edges,
        line_vp_edges=line_vp_edges,
        points3d=refined_points,
        stats=stats,
    )


def _line_scale(track: LineTrack, views: dict[int, CameraView]) -> float:
    scales = []
    mid = track.segment.midpoint
    for img, _ in track.supports:
        depth = views[img].depth(mid)
        if depth > 0:
            scales.append(depth / views[img].focal)
    return min(scales) if scales else 0.0
