"""Multi-view keypoint alignment.

The articulation parameters are one shared pose (per-bone axis-angle plus a
root translation) and, for every view, an extra root rotation and
translation. The per-view root rotation is attenuated by ``root_attenuation``
before it is composed onto the shared root rotation:

    R_root(view) = rodrigues(s * r_view) @ rodrigues(r_root)

Gradients are analytic. A small rotation of bone ``b`` with world angular
velocity ``w`` moves every point ``P`` below ``b`` by ``w x (P - head_b)``, so
the loss gradient with respect to ``w`` is ``sum (P - head_b) x dL/dP``; the
right Jacobian of the exponential map carries it back to axis-angle space.
"""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import (DivergenceError, InvalidInputError, NonFiniteGradientError,
                     UnusableTargetsError)
from .mvcam import NEAR_EPS
from .rig import Pose, compile_bindings, compile_vertices, forward_kinematics, skin
from .rotations import (log_map, right_jacobian, right_jacobian_batch, rodrigues,
                        rodrigues_batch)

log = logging.getLogger(__name__)

DEFAULT_ROOT_ATTENUATION = 0.3


@dataclass(frozen=True, eq=False)
class KeypointObservation:
    view_id: int
    keypoint_id: str
    position: np.ndarray
    visible: bool = True
    confidence: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        object.__setattr__(self, "position", pos)
        if not 0.0 <= self.confidence <= 1.0:
            raise InvalidInputError(
                f"confidence {self.confidence} outside [0, 1] for {self.keypoint_id!r}",
                "confidence")
        if self.visible and not np.all(np.isfinite(pos)):
            raise InvalidInputError(f"visible keypoint {self.keypoint_id!r} has non-finite position",
                                    "position")


@dataclass(frozen=True, eq=False)
class TargetSet:
    observations: tuple

    def __post_init__(self):
        obs = tuple(sorted(self.observations, key=lambda o: (o.view_id, o.keypoint_id)))
        keys = [(o.view_id, o.keypoint_id) for o in obs]
        if len(set(keys)) != len(keys):
            raise InvalidInputError("duplicate (view_id, keypoint_id) observation", "keypoints.id")
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return len(self.observations)

    def __iter__(self):
        return iter(self.observations)

    def view_ids(self):
        return sorted({o.view_id for o in self.observations})


@dataclass(eq=False)
class AlignProblem:
    skeleton: object
    mesh: object
    bindings: tuple
    rig: object
    targets: TargetSet
    shared_pose: Pose
    per_view_rotation: np.ndarray = None
    per_view_translation: np.ndarray = None
    root_attenuation: float = DEFAULT_ROOT_ATTENUATION

    def __post_init__(self):
        n = len(self.rig)
        if self.per_view_rotation is None:
            self.per_view_rotation = np.zeros((n, 3))
        if self.per_view_translation is None:
            self.per_view_translation = np.zeros((n, 3))
        self.per_view_rotation = np.array(self.per_view_rotation, dtype=float).reshape(-1, 3)
        self.per_view_translation = np.array(self.per_view_translation, dtype=float).reshape(-1, 3)
        if len(self.per_view_rotation) != n or len(self.per_view_translation) != n:
            raise InvalidInputError("per-view root parameters must have one row per view",
                                    "per_view_root")
        if not 0.0 <= self.root_attenuation <= 1.0:
            raise InvalidInputError("root_attenuation must be in [0, 1]", "root_attenuation")
        if len(self.shared_pose) != len(self.skeleton):
            raise InvalidInputError("shared pose does not match the skeleton", "rotations")
        for o in self.targets:
            if not 0 <= o.view_id < n:
                raise InvalidInputError(f"target view {o.view_id} not in camera rig", "view_id")

    @cached_property
    def compiled(self):
        return _Compiled(self)

    @property
    def n_views(self):
        return len(self.rig)

    def with_parameters(self, shared_pose=None, per_view_rotation=None, per_view_translation=None):
        new = replace(
            self,
            shared_pose=self.shared_pose if shared_pose is None else shared_pose,
            per_view_rotation=(self.per_view_rotation if per_view_rotation is None
                               else per_view_rotation),
            per_view_translation=(self.per_view_translation if per_view_translation is None
                                  else per_view_translation))
        if "compiled" in self.__dict__:
            new.__dict__["compiled"] = self.__dict__["compiled"]
        return new

    def parameter_vector(self):
        return np.concatenate([self.shared_pose.rotations.ravel(),
                               self.shared_pose.root_translation,
                               self.per_view_rotation.ravel(),
                               self.per_view_translation.ravel()])

    def from_vector(self, x):
        b, n = len(self.skeleton), self.n_views
        rot = x[:3 * b].reshape(b, 3)
        tr = x[3 * b:3 * b + 3]
        pvr = x[3 * b + 3:3 * b + 3 + 3 * n].reshape(n, 3)
        pvt = x[3 * b + 3 + 3 * n:].reshape(n, 3)
        return self.with_parameters(Pose(rot.copy(), tr.copy()), pvr.copy(), pvt.copy())

    def parameter_names(self):
        names = []
        for i, bone in enumerate(self.skeleton):
            label = f" ({bone.name})" if bone.name else ""
            names += [f"rotations[{i}][{a}]{label}" for a in range(3)]
        names += [f"root_translation[{a}]" for a in range(3)]
        for v in range(self.n_views):
            names += [f"per_view_rotation[{v}][{a}]" for a in range(3)]
        for v in range(self.n_views):
            names += [f"per_view_translation[{v}][{a}]" for a in range(3)]
        return names


class _Compiled:
    """Problem data that does not depend on the articulation parameters."""

    def __init__(self, problem):
        sk = problem.skeleton
        self.points = compile_bindings(sk, problem.mesh, problem.bindings)
        row = {k: i for i, k in enumerate(self.points.ids)}
        n = len(problem.rig)
        self.skipped = sorted({o.keypoint_id for o in problem.targets if o.keypoint_id not in row})
        self.rows, self.uv, self.conf = [], [], []
        for v in range(n):
            obs = [o for o in problem.targets
                   if o.view_id == v and o.visible and o.keypoint_id in row]
            self.rows.append(np.array([row[o.keypoint_id] for o in obs], dtype=int))
            self.uv.append(np.array([o.position for o in obs]).reshape(-1, 2))
            self.conf.append(np.array([o.confidence for o in obs], dtype=float))
        self.term_anc = sk.ancestors[:, self.points.bone].astype(float)  # (B, J)
        self.cams = list(problem.rig)
        self.heads = sk.heads
        self.parents = sk.parents
        self.root = sk.root


def _vertex_points(problem):
    c = problem.compiled
    if not hasattr(c, "_vertices"):
        c._vertices = compile_vertices(problem.skeleton, problem.mesh)
        c._vertex_anc = problem.skeleton.ancestors[:, c._vertices.bone].astype(float)
    return c._vertices, c._vertex_anc


@dataclass
class _State:
    """Posed quantities for every view."""

    R: np.ndarray  # (N, B, 3, 3) world rotations
    t: np.ndarray  # (N, B, 3) posed heads
    Rrel: np.ndarray  # (B, 3, 3) rotations relative to the root frame
    root_R: np.ndarray  # (N, 3, 3)
    view_R: np.ndarray  # (N, 3, 3) attenuated per-view rotations


def _pose_state(problem):
    c = problem.compiled
    pose = problem.shared_pose
    s = problem.root_attenuation
    local = rodrigues_batch(pose.rotations)
    b = len(local)
    Rrel = np.empty((b, 3, 3))
    trel = np.empty((b, 3))
    # relative to the root frame, excluding the root's own rotation
    for i, p in enumerate(c.parents):
        if p < 0:
            Rrel[i] = np.eye(3)
            trel[i] = 0.0
        else:
            Rrel[i] = Rrel[p] @ local[i]
            trel[i] = Rrel[p] @ (c.heads[i] - c.heads[p]) + trel[p]
    view_R = rodrigues_batch(s * problem.per_view_rotation)
    root_R = view_R @ local[c.root]
    R = np.einsum("vij,bjk->vbik", root_R, Rrel)
    origin = c.heads[c.root] + pose.root_translation + problem.per_view_translation  # (N, 3)
    t = np.einsum("vij,bj->vbi", root_R, trel) + origin[:, None, :]
    return _State(R, t, Rrel, root_R, view_R)


def _view_transforms(problem, view):
    """World transforms for one view, computed with plain forward kinematics."""
    s = problem.root_attenuation
    pose = problem.shared_pose
    root = problem.skeleton.root
    root_R = rodrigues(s * problem.per_view_rotation[view]) @ rodrigues(pose.rotations[root])
    shifted = Pose(pose.rotations, pose.root_translation + problem.per_view_translation[view])
    return forward_kinematics(problem.skeleton, shifted, root_rotation=root_R)


def effective_root_rotation(problem, view):
    """Axis-angle actually applied for a view's root override (``s * r``)."""
    return problem.root_attenuation * problem.per_view_rotation[view]


def render_keypoints(problem, view):
    """Map keypoint id to (pixel position, visible) for one view."""
    if not 0 <= view < problem.n_views:
        raise InvalidInputError(f"view {view} out of range", "view")
    tf = _view_transforms(problem, view)
    pts = problem.compiled.points
    X, _ = pts.evaluate(tf.rotations, tf.translations)
    cam = problem.rig[view]
    pc = cam.to_camera(X)
    out = {}
    for k, kid in enumerate(pts.ids):
        z = pc[k, 2]
        if z > NEAR_EPS:
            uv = cam.focal * pc[k, :2] / z + np.asarray(cam.principal)
            out[kid] = (uv, True)
        else:
            out[kid] = (np.full(2, np.nan), False)
    return out


@dataclass
class AlignGradient:
    rotations: np.ndarray
    root_translation: np.ndarray
    per_view_rotation: np.ndarray
    per_view_translation: np.ndarray

    def flat(self):
        return np.concatenate([self.rotations.ravel(), self.root_translation,
                               self.per_view_rotation.ravel(), self.per_view_translation.ravel()])


@dataclass
class _Evaluation:
    loss: float
    keypoint_loss: float
    per_view: np.ndarray
    n_matched: int
    gradient: AlignGradient = None


def _project_with_jac(cam, X):
    pc = cam.to_camera(X)
    z = pc[:, 2]
    ok = z > NEAR_EPS
    zs = np.where(ok, z, 1.0)
    uv = cam.focal * pc[:, :2] / zs[:, None] + np.asarray(cam.principal)
    Rm = cam.rotation
    fz = (cam.focal / zs)[:, None]
    du = fz * (Rm[0][None] - (pc[:, 0] / zs)[:, None] * Rm[2][None])
    dv = fz * (Rm[1][None] - (pc[:, 1] / zs)[:, None] * Rm[2][None])
    return uv, ok, np.stack([du, dv], axis=1)


def _backprop(state, P, G, term_anc):
    """Angular and translational gradients of one point set.

    ``P`` (N, J, 3) are term positions and ``G`` (N, J, 3) the loss gradient
    w.r.t. them. Returns d/d(angular velocity) per view and bone (N, B, 3)
    and d/d(root translation) per view (N, 3).
    """
    cross = np.cross(P, G)
    S1 = np.einsum("bj,vjc->vbc", term_anc, cross)
    S2 = np.einsum("bj,vjc->vbc", term_anc, G)
    domega = S1 - np.cross(state.t, S2)
    return domega, G.sum(axis=1)


def _evaluate(problem, want_grad=True, mask=None):
    """Loss (and gradient) at the problem's current parameters.

    ``mask`` is an optional ``(weight, target_masks, sampling)`` triple adding
    the silhouette term.
    """
    c = problem.compiled
    st = _pose_state(problem)
    pts = c.points
    n = problem.n_views
    P = np.einsum("vjab,jb->vja", st.R[:, pts.bone], pts.offset) + st.t[:, pts.bone]
    X = np.einsum("kj,vjc->vkc", pts.mix, P)

    resid, jacs, rows, confs, views = [], [], [], [], []
    per_view_sum = np.zeros(n)
    per_view_cnt = np.zeros(n, dtype=int)
    for v in range(n):
        r = c.rows[v]
        if len(r) == 0:
            continue
        uv, ok, J = _project_with_jac(c.cams[v], X[v, r])
        e = uv - c.uv[v]
        resid.append(e[ok])
        jacs.append(J[ok])
        rows.append(r[ok])
        confs.append(c.conf[v][ok])
        views.append(np.full(int(ok.sum()), v))
        per_view_sum[v] = float(np.sum(c.conf[v][ok] * np.einsum("ij,ij->i", e[ok], e[ok])))
        per_view_cnt[v] = int(ok.sum())
    M = int(per_view_cnt.sum())
    if M == 0:
        raise UnusableTargetsError("no visible matched keypoint pairs", "targets")
    kp_loss = float(per_view_sum.sum()) / M
    per_view = np.divide(per_view_sum, np.maximum(per_view_cnt, 1))
    loss = kp_loss

    mask_terms = None
    if mask is not None and mask[0] != 0.0:
        mval, mask_terms = _mask_term(problem, st, mask[1], want_grad)
        loss = kp_loss + mask[0] * mval

    ev = _Evaluation(loss, kp_loss, per_view, M)
    if not want_grad:
        return ev

    gX = np.zeros_like(X)
    for e, J, r, cf, vv in zip(resid, jacs, rows, confs, views):
        g2 = (2.0 / M) * cf[:, None] * e
        np.add.at(gX, (vv, r), np.einsum("ki,kic->kc", g2, J))
    G = np.einsum("kj,vkc->vjc", pts.mix, gX)
    domega, dtrans = _backprop(st, P, G, c.term_anc)
    if mask_terms is not None:
        Pm, Gm, anc = mask_terms
        dom2, dtr2 = _backprop(st, Pm, mask[0] * Gm, anc)
        domega = domega + dom2
        dtrans = dtrans + dtr2

    pose = problem.shared_pose
    s = problem.root_attenuation
    Jr = right_jacobian_batch(pose.rotations)  # (B, 3, 3)
    # world angular velocity = root_R(view) @ Rrel(b) @ Jr(b) @ delta
    local_grad = np.einsum("vbji,vbj->vbi", st.R, domega)  # R^T domega
    g_rot = np.einsum("bji,bj->bi", Jr, local_grad.sum(axis=0))
    root = c.root
    g_pvr = np.zeros((n, 3))
    for v in range(n):
        Jv = right_jacobian(s * problem.per_view_rotation[v])
        g_pvr[v] = s * Jv.T @ (st.view_R[v].T @ domega[v, root])
    ev.gradient = AlignGradient(g_rot, dtrans.sum(axis=0), g_pvr, dtrans.copy())
    return ev


def keypoint_loss(problem):
    """Confidence-weighted mean squared pixel distance over visible matched pairs."""
    return _evaluate(problem, want_grad=False).keypoint_loss


def loss_gradient(problem):
    """Analytic gradient of :func:`keypoint_loss`; raises on non-finite components."""
    g = _evaluate(problem).gradient
    _check_finite(problem, g.flat())
    return g


def _check_finite(problem, flat, report=None):
    bad = np.flatnonzero(~np.isfinite(flat))
    if len(bad):
        raise NonFiniteGradientError(problem.parameter_names()[bad[0]], report)


# -- silhouette term --------------------------------------------------------

def _sample(mask, uv, mode):
    """Sample a (H, W) mask at pixel positions; outside the image reads 0.

    Pixel (i, j) covers [j, j+1) x [i, i+1). Returns values and, for
    bilinear sampling, the spatial gradient d/d(u, v).
    """
    h, w = mask.shape
    u, v = uv[:, 0], uv[:, 1]
    if mode == "nearest":
        j = np.floor(u).astype(int)
        i = np.floor(v).astype(int)
        inside = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        val = np.zeros(len(uv))
        val[inside] = mask[i[inside], j[inside]]
        return val, np.zeros_like(uv)
    if mode != "bilinear":
        raise InvalidInputError(f"unknown sampling mode {mode!r}", "sampling")
    x, y = u - 0.5, v - 0.5
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    fx, fy = x - x0, y - y0

    def at(i, j):
        ok = (i >= 0) & (i < h) & (j >= 0) & (j < w)
        out = np.zeros(len(uv))
        out[ok] = mask[i[ok], j[ok]]
        return out

    a, b = at(y0, x0), at(y0, x0 + 1)
    c, d = at(y0 + 1, x0), at(y0 + 1, x0 + 1)
    val = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    du = (1 - fy) * (b - a) + fy * (d - c)
    dv = (1 - fx) * (c - a) + fx * (d - b)
    return val, np.stack([du, dv], axis=1)


def _check_masks(problem, masks, what):
    masks = [np.asarray(m, dtype=float) for m in masks]
    if len(masks) != problem.n_views:
        raise InvalidInputError(f"{what}: expected {problem.n_views} masks", what)
    for cam, m in zip(problem.rig, masks):
        w, h = cam.image_size
        if m.shape != (h, w):
            raise InvalidInputError(
                f"{what}: view {cam.view_id} mask is {m.shape}, camera is {(h, w)}", what)
    return masks


def mask_loss(problem, rendered_masks, target_masks, sampling="nearest"):
    """Mean squared difference of two silhouette indicators sampled at the
    projected posed mesh vertices of every view.

    ``rendered_masks=None`` means the rendered indicator is 1 at every vertex
    (a vertex always lies on its own silhouette).
    """
    target_masks = _check_masks(problem, target_masks, "target_masks")
    if rendered_masks is not None:
        rendered_masks = _check_masks(problem, rendered_masks, "rendered_masks")
    total, count = 0.0, 0
    for v in range(problem.n_views):
        verts = skin(problem.mesh, _view_transforms(problem, v))
        if not len(verts):
            continue
        uv, ok, _ = _project_with_jac(problem.rig[v], verts)
        uv = uv[ok]
        tv, _ = _sample(target_masks[v], uv, sampling)
        rv = np.ones(len(uv)) if rendered_masks is None else \
            _sample(rendered_masks[v], uv, sampling)[0]
        total += float(np.sum((rv - tv) ** 2))
        count += len(uv)
    return total / count if count else 0.0


def _mask_term(problem, st, target_masks, want_grad):
    verts, anc = _vertex_points(problem)
    P = np.einsum("vjab,jb->vja", st.R[:, verts.bone], verts.offset) + st.t[:, verts.bone]
    X = np.einsum("kj,vjc->vkc", verts.mix, P)
    total, count = 0.0, 0
    gX = np.zeros_like(X)
    for v in range(problem.n_views):
        uv, ok, J = _project_with_jac(problem.rig[v], X[v])
        val, duv = _sample(target_masks[v], uv, "bilinear")
        r = np.where(ok, 1.0 - val, 0.0)
        total += float(np.sum(r ** 2))
        count += int(ok.sum())
        gX[v] = np.einsum("k,ki,kic->kc", -2.0 * r, duv, J)
    if count == 0:
        return 0.0, None
    gX /= count
    G = np.einsum("kj,vkc->vjc", verts.mix, gX)
    return total / count, (P, G, anc)


# -- optimizer ---------------------------------------------------------------

@dataclass
class OptimizerConfig:
    learning_rate: float = 0.05
    max_iterations: int = 300
    tol: float = 1e-9
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    window: int = 20
    lr_schedule: str = "constant"
    lr_final_ratio: float = 0.01
    init_jitter: float = 0.0
    mask_weight: float = 0.0

    def __post_init__(self):
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidInputError(f"unknown lr_schedule {self.lr_schedule!r}", "lr_schedule")
        if self.max_iterations < 0:
            raise InvalidInputError("max_iterations must be >= 0", "max_iterations")

    def lr_at(self, it):
        if self.lr_schedule == "constant" or self.max_iterations <= 1:
            return self.learning_rate
        frac = it / (self.max_iterations - 1)
        lo = self.learning_rate * self.lr_final_ratio
        return lo + 0.5 * (self.learning_rate - lo) * (1.0 + np.cos(np.pi * frac))


@dataclass
class OptimReport:
    iterations: int
    initial_loss: float
    final_loss: float
    per_view_loss: list
    loss_trace: list
    converged: bool
    stop_reason: str
    matched_pairs: int
    skipped_keypoints: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        return asdict(self)


class Adam:
    """Adaptive-moment gradient descent on a flat parameter vector."""

    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, x, g, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return x - lr * mhat / (np.sqrt(vhat) + self.eps)


def optimize_pose(problem, config=None, target_masks=None):
    """Fit the shared pose and per-view roots to the targets.

    Returns ``(pose, per_view_rotation, per_view_translation, report)`` for the
    best parameters seen. Raises :class:`DivergenceError` when the loss stays
    above 1000x its initial value for 50 consecutive iterations. A loss already
    below ``tol`` counts as converged.
    """
    config = config or OptimizerConfig()
    start = time.perf_counter()
    mask = None
    if config.mask_weight:
        if target_masks is None:
            raise InvalidInputError("mask_weight > 0 requires target masks", "mask_weight")
        mask = (config.mask_weight, _check_masks(problem, target_masks, "target_masks"))
    x = problem.parameter_vector()
    if config.init_jitter:
        rng = np.random.default_rng(config.seed)
        x = x + config.init_jitter * rng.standard_normal(len(x))
    cur = problem.from_vector(x)

    def evaluate(p):
        m = None if mask is None else (mask[0], mask[1], "bilinear")
        ev = _evaluate(p, want_grad=True, mask=m)
        return ev

    ev = evaluate(cur)
    initial = ev.loss
    trace = [initial]
    best_x, best_loss, best_ev = x.copy(), initial, ev
    best_hist = [initial]
    adam = Adam(len(x), config.beta1, config.beta2, config.eps)
    converged, reason, over = False, "max_iterations", 0
    steps = 0

    def report(stop):
        return OptimReport(
            iterations=steps, initial_loss=initial, final_loss=best_loss,
            per_view_loss=[float(v) for v in best_ev.per_view], loss_trace=trace,
            converged=converged, stop_reason=stop, matched_pairs=best_ev.n_matched,
            skipped_keypoints=list(problem.compiled.skipped),
            wall_time=time.perf_counter() - start)

    # the loss is nonnegative, so below tol no further improvement can reach tol
    if initial < config.tol:
        converged, reason = True, "converged"
    for it in range(1, config.max_iterations + 1):
        if converged:
            break
        g = ev.gradient.flat()
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                problem.parameter_names()[np.flatnonzero(~np.isfinite(g))[0]], report("non-finite"))
        x = adam.step(x, g, config.lr_at(it - 1))
        cur = cur.from_vector(x)
        steps = it
        ev = evaluate(cur)
        trace.append(ev.loss)
        if ev.loss < best_loss:
            best_x, best_loss, best_ev = x.copy(), ev.loss, ev
        best_hist.append(best_loss)
        over = over + 1 if ev.loss > 1e3 * initial else 0
        if over >= 50:
            raise DivergenceError(f"loss diverged after {it} iterations", report("diverged"))
        if best_loss < config.tol or (
                it >= config.window and best_hist[-1 - config.window] - best_loss < config.tol):
            converged, reason = True, "converged"
            break

    best = problem.from_vector(best_x)
    rep = report(reason)
    log.debug("optimize_pose: %d iterations, loss %.6g -> %.6g", steps, initial, best_loss)
    return (best.shared_pose.canonical(), best.per_view_rotation,
            best.per_view_translation, rep)


def fold_root(problem, view):
    """Shared pose with a view's attenuated root override folded into the root."""
    pose = problem.shared_pose.copy()
    root = problem.skeleton.root
    R = rodrigues(problem.root_attenuation * problem.per_view_rotation[view]) \
        @ rodrigues(pose.rotations[root])
    pose.rotations[root] = log_map(R)
    pose.root_translation = pose.root_translation + problem.per_view_translation[view]
    return pose
