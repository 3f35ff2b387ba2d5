"""Joint refinement of 3D points, lines, and vanishing point directions.

Cameras stay fixed.  Points use 3 free parameters; infinite lines use the
orthonormal 4-DoF parameterization (quaternion tangent plus one rotation
angle of the SO(2) factor); VP directions move on the unit sphere (2 DoF).
The cost couples feature reprojection terms with structural terms:

* point reprojection: pixel residual, squared loss;
* line reprojection: perpendicular distance of each observed endpoint to
  the projected infinite line, scaled by an angle weight
  ``exp(alpha * (1 - cos angle))`` that punishes direction mismatch, under
  a Cauchy loss;
* point-on-line and line-parallel-to-VP terms weighted by their 2D
  association support, under a Huber loss;
* an orthogonality residual (cosine of the angle) for VP pairs that start
  within a few degrees of perpendicular.

The solver is a dense Levenberg-Marquardt with multiplicative diagonal
damping and iterative reweighting for the robust losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    EPS,
    CameraView,
    MinimalLineParam,
    PluckerLine,
    Segment2D,
    Segment3D,
    closest_point_line_to_line,
    minimal_to_plucker,
    normalized,
    point_line_distance_3d,
    quat_exp,
    quat_mul,
    quat_to_rotmat,
    skew,
)

_E1 = np.array([1.0, 0.0, 0.0])
_E2 = np.array([0.0, 1.0, 0.0])
_SKEW_E1 = skew(_E1)
_SKEW_E2 = skew(_E2)


# ---------------------------------------------------------------------------
# problem definition
# ---------------------------------------------------------------------------


@dataclass
class JointProblem:
    """Observations and initial values for joint refinement.

    Index conventions: ``point_obs`` rows are ``(point_idx, image_id,
    pixel)``, ``line_obs`` rows are ``(line_idx, image_id, Segment2D)``,
    association rows carry an integer support weight.
    """

    views: dict[int, CameraView]
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    lines: list[MinimalLineParam] = field(default_factory=list)
    vps: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    point_obs: list[tuple[int, int, np.ndarray]] = field(default_factory=list)
    line_obs: list[tuple[int, int, Segment2D]] = field(default_factory=list)
    point_line: list[tuple[int, int, float]] = field(default_factory=list)
    line_vp: list[tuple[int, int, float]] = field(default_factory=list)
    vp_ortho: list[tuple[int, int]] = field(default_factory=list)

    def dof(self) -> int:
        return 3 * len(self.points) + 4 * len(self.lines) + 2 * len(self.vps)


@dataclass(frozen=True)
class OptimizeConfig:
    max_iterations: int = 100
    damping_init: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.5
    damping_max: float = 1e10
    ftol: float = 1e-8
    gtol: float = 1e-10
    angle_weight_alpha: float = 10.0
    line_loss_scale: float = 0.25  # Cauchy, pixels
    assoc_loss_scale: float = 0.25  # Huber, scene units / radians-ish
    ortho_angle_deg: float = 87.0


@dataclass
class OptimizeResult:
    points: np.ndarray
    lines: list[MinimalLineParam]
    vps: np.ndarray
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: str


def vp_orthogonal_pairs(vps: np.ndarray, angle_deg: float = 87.0) -> list[tuple[int, int]]:
    """Index pairs of VP directions within (90 - (90 - angle_deg)) .. 90+ of each other.

    Any pair whose mutual angle exceeds ``angle_deg`` is considered
    near-orthogonal and returned for regularization.
    """
    out = []
    cos_max = abs(math.cos(math.radians(angle_deg)))
    for i in range(len(vps)):
        for j in range(i + 1, len(vps)):
            if abs(float(vps[i] @ vps[j])) <= cos_max:
                out.append((i, j))
    return out


# ---------------------------------------------------------------------------
# robust losses (act on the squared norm of a residual block)
# ---------------------------------------------------------------------------


def _loss_value_and_weight(kind: str, s: float, scale: float) -> tuple[float, float]:
    c2 = scale * scale
    if kind == "squared":
        return s, 1.0
    if kind == "cauchy":
        return c2 * math.log1p(s / c2), 1.0 / (1.0 + s / c2)
    if kind == "huber":
        if s <= c2:
            return s, 1.0
        r = math.sqrt(s)
        return 2.0 * scale * r - c2, scale / r
    raise ValueError(f"unknown loss {kind!r}")


# ---------------------------------------------------------------------------
# state and retraction
# ---------------------------------------------------------------------------


class _State:
    def __init__(self, points, lines, vps):
        self.points = np.array(points, dtype=np.float64).reshape(-1, 3)
        self.lines = list(lines)
        self.vps = np.array(vps, dtype=np.float64).reshape(-1, 3)
        for i in range(len(self.vps)):
            self.vps[i] = normalized(self.vps[i])

    def copy(self) -> "_State":
        return _State(self.points.copy(), list(self.lines), self.vps.copy())

    def vp_basis(self, i: int) -> np.ndarray:
        v = self.vps[i]
        seed = _E1 if abs(v[0]) < 0.9 else _E2
        b1 = normalized(np.cross(v, seed))
        b2 = np.cross(v, b1)
        return np.column_stack([b1, b2])

    def retract(self, delta: np.ndarray, offsets) -> "_State":
        np_, nl, nv = offsets
        out = self.copy()
        for i in range(len(self.points)):
            out.points[i] = self.points[i] + delta[3 * i : 3 * i + 3]
        for j, par in enumerate(self.lines):
            d = delta[np_ + 4 * j : np_ + 4 * j + 4]
            q = quat_mul(par.q, quat_exp(d[:3]))
            c, s = math.cos(d[3]), math.sin(d[3])
            w = np.array([par.w[0] * c - par.w[1] * s, par.w[0] * s + par.w[1] * c])
            out.lines[j] = MinimalLineParam(q, w)
        for k in range(len(self.vps)):
            d = delta[nl + 2 * k : nl + 2 * k + 2]
            out.vps[k] = normalized(self.vps[k] + self.vp_basis(k) @ d)
        return out


def _line_geometry(par: MinimalLineParam):
    """Plucker pair of a minimal parameterization plus local-coordinate partials."""
    U = quat_to_rotmat(par.q)
    w1, w2 = float(par.w[0]), float(par.w[1])
    if abs(w1) < 1e-12:
        raise FloatingPointError("line drifted to infinity during optimization")
    rho = w2 / w1
    d = U[:, 0]
    u2 = U[:, 1]
    m = rho * u2
    dd_dr = -U @ _SKEW_E1  # 3x3, columns = rotation tangent directions
    du2_dr = -U @ _SKEW_E2
    dm = np.zeros((3, 4))
    dm[:, :3] = rho * du2_dr
    dm[:, 3] = u2 / (w1 * w1)
    dd = np.zeros((3, 4))
    dd[:, :3] = dd_dr
    return d, m, dd, dm


# ---------------------------------------------------------------------------
# residual blocks
# ---------------------------------------------------------------------------


def _project_jacobian(view: CameraView, X: np.ndarray):
    """Pixel position and its 2x3 Jacobian w.r.t. the camera-frame point."""
    hom = view.K @ X
    z = hom[2]
    pix = hom[:2] / z
    J = (view.K[:2, :] * z - np.outer(hom[:2], view.K[2, :])) / (z * z)
    return pix, J


def _point_block(state, view, pi, pixel):
    X = view.R @ state.points[pi] + view.t
    if X[2] <= EPS:
        # behind the camera: keep a large finite residual, zero slope
        return np.array([1e6, 1e6]), np.zeros((2, 3))
    pix, Jx = _project_jacobian(view, X)
    return pix - pixel, Jx @ view.R


def _line_block(state, view, li, seg: Segment2D, alpha: float, view_pre):
    d, m, dd, dm = _line_geometry(state.lines[li])
    A_m, A_d = view_pre
    l = A_m @ m + A_d @ d
    Jl = A_m @ dm + A_d @ dd  # 3x4
    n = math.hypot(l[0], l[1])
    if n < EPS:
        return np.array([1e6, 1e6]), np.zeros((2, 4))
    dn = np.array([l[0] / n, l[1] / n, 0.0])

    o = seg.direction
    g = l[0] * o[1] - l[1] * o[0]
    c_raw = g / n
    cosphi = abs(c_raw)
    wa = math.exp(alpha * (1.0 - cosphi))
    dg = np.array([o[1], -o[0], 0.0])
    dcraw = dg / n - c_raw * dn / n
    dcos = math.copysign(1.0, c_raw) * dcraw if cosphi > EPS else np.zeros(3)
    dwa = -alpha * wa * dcos

    res = np.empty(2)
    J = np.empty((2, 4))
    for row, p in enumerate((seg.start, seg.end)):
        x = np.array([p[0], p[1], 1.0])
        e = float(l @ x) / n
        de = x / n - e * dn / n
        res[row] = wa * e
        J[row] = (wa * de + e * dwa) @ Jl
    return res, J


def _point_line_block(state, pi, li, weight):
    d, m, dd, dm = _line_geometry(state.lines[li])
    p = state.points[pi]
    e = -np.cross(d, m) - np.cross(d, np.cross(d, p))
    dist = np.linalg.norm(e)
    if dist < 1e-12:
        return np.zeros(1), np.zeros((1, 3)), np.zeros((1, 4))
    ehat = e / dist
    de_dp = np.eye(3) - np.outer(d, d)
    de_dd = skew(m) + skew(np.cross(d, p)) + skew(d) @ skew(p)
    de_dm = -skew(d)
    Jp = weight * (ehat @ de_dp)[None, :]
    Jl = weight * (ehat @ (de_dd @ dd + de_dm @ dm))[None, :]
    return np.array([weight * dist]), Jp, Jl


def _line_vp_block(state, li, vi, weight, basis):
    d, _, dd, _ = _line_geometry(state.lines[li])
    v = state.vps[vi]
    e = np.cross(d, v)
    nrm = np.linalg.norm(e)
    if nrm < 1e-12:
        return np.zeros(1), np.zeros((1, 4)), np.zeros((1, 2))
    ehat = e / nrm
    de_dd = -skew(v)
    de_dv = skew(d)
    Jl = weight * (ehat @ (de_dd @ dd))[None, :]
    Jv = weight * (ehat @ (de_dv @ basis))[None, :]
    return np.array([weight * nrm]), Jl, Jv


def _vp_ortho_block(state, a, b, basis_a, basis_b):
    va, vb = state.vps[a], state.vps[b]
    r = float(va @ vb)
    Ja = (vb @ basis_a)[None, :]
    Jb = (va @ basis_b)[None, :]
    return np.array([r]), Ja, Jb


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


class _Linearizer:
    def __init__(self, problem: JointProblem, config: OptimizeConfig):
        self.problem = problem
        self.config = config
        self.np_ = 3 * len(problem.points)
        self.nl = self.np_ + 4 * len(problem.lines)
        self.nv = self.nl + 2 * len(problem.vps)
        self.view_pre = {}
        for img, view in problem.views.items():
            KinvT = np.linalg.inv(view.K).T
            self.view_pre[img] = (KinvT @ view.R, KinvT @ skew(view.t) @ view.R)
        self.offsets = (self.np_, self.nl, self.nv)

    def blocks(self, state: _State, with_jac: bool):
        """Yield (residual, loss kind, scale, [(col offset, J block), ...])."""
        p = self.problem
        cfg = self.config
        for pi, img, pixel in p.point_obs:
            r, J = _point_block(state, p.views[img], pi, pixel)
            yield r, "squared", 1.0, [(3 * pi, J)]
        for li, img, seg in p.line_obs:
            r, J = _line_block(state, p.views[img], li, seg, cfg.angle_weight_alpha, self.view_pre[img])
            yield r, "cauchy", cfg.line_loss_scale, [(self.np_ + 4 * li, J)]
        for pi, li, w in p.point_line:
            r, Jp, Jl = _point_line_block(state, pi, li, w)
            yield r, "huber", cfg.assoc_loss_scale, [(3 * pi, Jp), (self.np_ + 4 * li, Jl)]
        bases = [state.vp_basis(k) for k in range(len(state.vps))]
        for li, vi, w in p.line_vp:
            r, Jl, Jv = _line_vp_block(state, li, vi, w, bases[vi])
            yield r, "huber", cfg.assoc_loss_scale, [
                (self.np_ + 4 * li, Jl),
                (self.nl + 2 * vi, Jv),
            ]
        for a, b in p.vp_ortho:
            r, Ja, Jb = _vp_ortho_block(state, a, b, bases[a], bases[b])
            yield r, "squared", 1.0, [(self.nl + 2 * a, Ja), (self.nl + 2 * b, Jb)]

    def cost(self, state: _State) -> float:
        total = 0.0
        for r, kind, scale, _ in self.blocks(state, with_jac=False):
            s = float(r @ r)
            val, _ = _loss_value_and_weight(kind, s, scale)
            total += val
        return total

    def normal_equations(self, state: _State):
        n = self.nv
        H = np.zeros((n, n))
        g = np.zeros(n)
        cost = 0.0
        for r, kind, scale, blocks in self.blocks(state, with_jac=True):
            s = float(r @ r)
            val, w = _loss_value_and_weight(kind, s, scale)
            cost += val
            sw = math.sqrt(w)
            rw = sw * r
            jblocks = [(off, sw * J) for off, J in blocks]
            for off_i, Ji in jblocks:
                di = Ji.shape[1]
                g[off_i : off_i + di] += Ji.T @ rw
                for off_j, Jj in jblocks:
                    dj = Jj.shape[1]
                    H[off_i : off_i + di, off_j : off_j + dj] += Ji.T @ Jj
        return H, g, cost

    def raw_residuals_and_jacobian(self, state: _State):
        """Unweighted stacked residual vector and dense Jacobian (for checks)."""
        rows = []
        jrows = []
        for r, _, _, blocks in self.blocks(state, with_jac=True):
            rows.append(r)
            Jrow = np.zeros((len(r), self.nv))
            for off, J in blocks:
                Jrow[:, off : off + J.shape[1]] = J
            jrows.append(Jrow)
        if not rows:
            return np.zeros(0), np.zeros((0, self.nv))
        return np.concatenate(rows), np.vstack(jrows)


def optimize(problem: JointProblem, config: OptimizeConfig = OptimizeConfig()) -> OptimizeResult:
    """Run Levenberg-Marquardt on a joint problem.  Cameras are fixed."""
    lin = _Linearizer(problem, config)
    state = _State(problem.points, problem.lines, problem.vps)
    n = lin.nv
    if n == 0:
        c = lin.cost(state)
        return OptimizeResult(state.points, state.lines, state.vps, c, c, 0, True, "empty")

    damping = config.damping_init
    H, g, cost = lin.normal_equations(state)
    initial_cost = cost
    termination = "max_iterations"
    converged = False
    iters = 0

    for iters in range(1, config.max_iterations + 1):
        if np.max(np.abs(g)) < config.gtol:
            termination, converged = "gradient", True
            break
        accepted = False
        while damping <= config.damping_max:
            D = np.diag(H).copy()
            floor = 1e-12 * max(1.0, D.max() if D.size else 1.0)
            Hd = H + np.diag(damping * np.maximum(D, floor))
            try:
                delta = np.linalg.solve(Hd, -g)
            except np.linalg.LinAlgError:
                damping *= config.damping_up
                continue
            candidate = state.retract(delta, lin.offsets)
            try:
                new_cost = lin.cost(candidate)
            except FloatingPointError:
                new_cost = math.inf
            if new_cost < cost:
                accepted = True
                break
            damping *= config.damping_up
        if not accepted:
            termination = "damping_exhausted"
            break
        rel_drop = (cost - new_cost) / max(cost, 1e-30)
        state = candidate
        H, g, cost = lin.normal_equations(state)
        damping = max(1e-12, damping * config.damping_down)
        if rel_drop < config.ftol:
            termination, converged = "cost", True
            break

    return OptimizeResult(
        state.points, state.lines, state.vps, initial_cost, cost, iters, converged, termination
    )


# ---------------------------------------------------------------------------
# support helpers around the optimization
# ---------------------------------------------------------------------------


def segment_on_line_from_supports(
    line: PluckerLine,
    supports: list[tuple[Segment2D, CameraView]],
) -> Segment3D | None:
    """Clip an infinite line to an extent explained by its 2D supports.

    Every observed endpoint ray is intersected (closest-point) with the
    line; the extent keeps the third-outermost parameter on each side when
    six or more are available, mirroring the track refit rule.
    """
    origin = line.closest_point_to_origin()
    ts = []
    for seg, view in supports:
        center = view.camera_center()
        for px in (seg.start, seg.end):
            ray = PluckerLine.from_point_direction(center, view.ray_direction_world(px))
            try:
                foot = closest_point_line_to_line(line, ray)
            except ValueError:
                continue
            ts.append(float((foot - origin) @ line.d))
    if len(ts) < 2:
        return None
    ts.sort()
    if len(ts) >= 6:
        lo, hi = ts[2], ts[-3]
    else:
        lo, hi = ts[0], ts[-1]
    if hi - lo <= 1e-12:
        return None
    return Segment3D(origin + lo * line.d, origin + hi * line.d)


def soft_point_line_weights(
    line_supports: list[list[tuple[int, int]]],
    edges_by_image: dict[int, set[tuple[int, int]]],
    min_weight: int = 3,
) -> list[tuple[int, int, float]]:
    """Count 2D point-segment co-occurrences between tracks.

    ``line_supports[li]`` lists ``(image, segment)`` supports of line track
    ``li``; ``edges_by_image[img]`` holds ``(point_track, segment)`` pairs.
    Returns ``(point_track, line_track, weight)`` with weight >= min_weight.
    """
    counts: dict[tuple[int, int], int] = {}
    for li, supports in enumerate(line_supports):
        for img, seg_idx in supports:
            for pt, s in edges_by_image.get(img, ()):  # modest sizes; linear scan is fine
                if s == seg_idx:
                    counts[(pt, li)] = counts.get((pt, li), 0) + 1
    return sorted((pt, li, float(c)) for (pt, li), c in counts.items() if c >= min_weight)


def soft_line_vp_weights(
    line_supports: list[list[tuple[int, int]]],
    vp_members: list[list[tuple[int, int]]],
    assignment_by_image: dict[int, np.ndarray],
    min_weight: int = 3,
) -> list[tuple[int, int, float]]:
    """Count how many supports of each line track carry each VP track."""
    member_sets = [set(m) for m in vp_members]
    out = []
    for li, supports in enumerate(line_supports):
        for vi, members in enumerate(member_sets):
            c = 0
            for img, seg_idx in supports:
                assign = assignment_by_image.get(img)
                if assign is None or seg_idx >= len(assign):
                    continue
                vp_id = int(assign[seg_idx])
                if vp_id >= 0 and (img, vp_id) in members:
                    c += 1
            if c >= min_weight:
                out.append((li, vi, float(c)))
    return out


def extract_point_line_edges(
    points: np.ndarray,
    point_scales: np.ndarray,
    lines: list[PluckerLine],
    line_scales: np.ndarray,
    candidates: list[tuple[int, int]],
    max_ratio: float = 2.0,
) -> list[tuple[int, int]]:
    """Keep candidate incidences whose 3D distance is small vs. uncertainty.

    The uncertainty scale of a feature is its minimum depth over focal
    length across observations; an edge survives when the point-line
    distance is at most ``max_ratio`` times the smaller of the two scales.
    """
    out = []
    for pi, li in candidates:
        sigma = min(float(point_scales[pi]), float(line_scales[li]))
        if sigma <= 0:
            continue
        if point_line_distance_3d(points[pi], lines[li]) / sigma <= max_ratio:
            out.append((pi, li))
    return sorted(out)


def extract_line_vp_edges(
    lines: list[PluckerLine],
    vps: np.ndarray,
    candidates: list[tuple[int, int]],
    max_angle_deg: float = 5.0,
) -> list[tuple[int, int]]:
    """Keep candidate line-VP pairs within an angular tolerance."""
    cos_min = math.cos(math.radians(max_angle_deg))
    out = []
    for li, vi in candidates:
        if abs(float(lines[li].d @ vps[vi])) >= cos_min:
            out.append((li, vi))
    return sorted(out)
