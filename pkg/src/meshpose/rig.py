"""Skeletal rig: bone hierarchy, forward kinematics, linear blend skinning,
and keypoints anchored to the rig.

Conventions: a bone's rest transform is the identity rotation placed at its
rest head. A bone's local transform rotates about its own head, expressed in
the parent's frame, so ``world(b) = world(parent(b)) @ local(b)``.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .rotations import canonicalize, rodrigues_batch

MAX_INFLUENCES = 4


def _vec3(x, what):
    a = np.asarray(x, dtype=float)
    if a.shape != (3,):
        raise InvalidInputError(f"{what} must be a 3-vector, got shape {a.shape}", what)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{what} is not finite", what)
    return a


@dataclass(frozen=True, eq=False)
class Bone:
    id: int
    parent: int | None
    rest_head: np.ndarray
    rest_tail: np.ndarray
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rest_head", _vec3(self.rest_head, f"bone {self.id} rest_head"))
        object.__setattr__(self, "rest_tail", _vec3(self.rest_tail, f"bone {self.id} rest_tail"))

    @property
    def length(self):
        return float(np.linalg.norm(self.rest_tail - self.rest_head))


class Skeleton:
    """Topologically sorted bone list with cached array views."""

    def __init__(self, bones):
        bones = tuple(bones)
        if not bones:
            raise InvalidInputError("skeleton has no bones", "bones")
        roots = [b for b in bones if b.parent is None]
        if len(roots) != 1:
            raise InvalidInputError(f"expected exactly one root bone, found {len(roots)}", "bones")
        for i, b in enumerate(bones):
            if b.id != i:
                raise InvalidInputError(f"bone at position {i} has id {b.id}", "bones.id")
            if b.parent is not None and not 0 <= b.parent < i:
                raise InvalidInputError(
                    f"bone {i} parent {b.parent} violates topological order", "bones.parent")
            if not b.length > 0:
                raise InvalidInputError(f"bone {i} has zero rest length", "bones.rest_tail")
        self.bones = bones
        self.root = roots[0].id
        self.parents = np.array([-1 if b.parent is None else b.parent for b in bones])
        self.heads = np.stack([b.rest_head for b in bones])
        self.tails = np.stack([b.rest_tail for b in bones])
        # ancestors[a, b] is True when a is b or an ancestor of b
        n = len(bones)
        anc = np.eye(n, dtype=bool)
        for i in range(n):
            p = self.parents[i]
            if p >= 0:
                anc[:, i] |= anc[:, p]
        self.ancestors = anc

    def __len__(self):
        return len(self.bones)

    def __iter__(self):
        return iter(self.bones)

    def __getitem__(self, i):
        return self.bones[i]

    @property
    def names(self):
        return [b.name for b in self.bones]

    @classmethod
    def from_unsorted(cls, bones):
        """Sort bones so parents precede children and renumber ids.

        Returns the skeleton and a map from the original ids to the new ones.
        """
        by_id = {}
        for b in bones:
            if b.id in by_id:
                raise InvalidInputError(f"duplicate bone id {b.id}", "bones.id")
            by_id[b.id] = b
        for b in bones:
            if b.parent is not None and b.parent not in by_id:
                raise InvalidInputError(f"bone {b.id} has unknown parent {b.parent}", "bones.parent")
        # Kahn's algorithm taking the smallest ready id first keeps sorted input unchanged
        children = {}
        for b in bones:
            children.setdefault(b.parent, []).append(b.id)
        ready = sorted(children.get(None, []))
        heapq.heapify(ready)
        order = []
        while ready:
            i = heapq.heappop(ready)
            order.append(i)
            for c in children.get(i, []):
                heapq.heappush(ready, c)
        if len(order) != len(bones):
            raise InvalidInputError("bone hierarchy contains a cycle or several roots", "bones.parent")
        remap = {old: new for new, old in enumerate(order)}
        sorted_bones = [
            Bone(remap[i], None if by_id[i].parent is None else remap[by_id[i].parent],
                 by_id[i].rest_head, by_id[i].rest_tail, by_id[i].name)
            for i in order
        ]
        return cls(sorted_bones), remap


@dataclass(eq=False)
class Pose:
    """Per-bone axis-angle rotations (radians) plus a root translation."""

    rotations: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotations = np.array(self.rotations, dtype=float).reshape(-1, 3)
        self.root_translation = np.array(self.root_translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls, n_bones):
        return cls(np.zeros((n_bones, 3)), np.zeros(3))

    def __len__(self):
        return len(self.rotations)

    def canonical(self):
        return Pose(np.stack([canonicalize(r) for r in self.rotations]), self.root_translation)

    def copy(self):
        return Pose(self.rotations.copy(), self.root_translation.copy())


@dataclass(eq=False)
class WorldTransforms:
    """Posed world rotation and head position of every bone."""

    rotations: np.ndarray  # (B, 3, 3)
    translations: np.ndarray  # (B, 3)
    rest_heads: np.ndarray  # (B, 3)

    def __len__(self):
        return len(self.rotations)

    def matrices(self):
        M = np.tile(np.eye(4), (len(self), 1, 1))
        M[:, :3, :3] = self.rotations
        M[:, :3, 3] = self.translations
        return M

    def apply(self, bone, points):
        """Apply bone's delta transform (posed world @ rest world inverse) to points."""
        p = np.asarray(points, dtype=float) - self.rest_heads[bone]
        return p @ self.rotations[bone].T + self.translations[bone]


def _check_pose(skeleton, pose):
    if len(pose) != len(skeleton):
        raise InvalidInputError(
            f"pose has {len(pose)} rotations for {len(skeleton)} bones", "rotations")
    if not (np.all(np.isfinite(pose.rotations)) and np.all(np.isfinite(pose.root_translation))):
        raise InvalidInputError("pose contains non-finite values", "rotations")


def forward_kinematics(skeleton, pose, root_rotation=None):
    """World transforms of all bones.

    ``root_rotation`` optionally replaces the root's rotation matrix (used for
    per-view root overrides).
    """
    _check_pose(skeleton, pose)
    local = rodrigues_batch(pose.rotations)
    if root_rotation is not None:
        local[skeleton.root] = root_rotation
    n = len(skeleton)
    R = np.empty((n, 3, 3))
    t = np.empty((n, 3))
    heads = skeleton.heads
    for i, p in enumerate(skeleton.parents):
        if p < 0:
            R[i] = local[i]
            t[i] = heads[i] + pose.root_translation
        else:
            R[i] = R[p] @ local[i]
            t[i] = R[p] @ (heads[i] - heads[p]) + t[p]
    return WorldTransforms(R, t, heads)


def posed_tails(skeleton, transforms):
    return np.einsum("bij,bj->bi", transforms.rotations, skeleton.tails - skeleton.heads) \
        + transforms.translations


class SkinnedMesh:
    """Triangle mesh with per-vertex bone weights (at most four influences)."""

    def __init__(self, vertices, faces, weights):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=int).reshape(-1, 3)
        nv = len(self.vertices)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise InvalidInputError("face index out of range", "faces")
        if len(weights) != nv:
            raise InvalidInputError(
                f"{len(weights)} weight lists for {nv} vertices", "weights")
        self.weights = []
        bones = np.zeros((nv, MAX_INFLUENCES), dtype=int)
        w = np.zeros((nv, MAX_INFLUENCES))
        for i, infl in enumerate(weights):
            infl = [(int(b), float(x)) for b, x in infl]
            if not infl or len(infl) > MAX_INFLUENCES:
                raise InvalidInputError(
                    f"vertex {i} has {len(infl)} influences (1..{MAX_INFLUENCES} allowed)", "weights")
            ws = np.array([x for _, x in infl])
            if np.any(ws < 0) or abs(ws.sum() - 1.0) > 1e-6:
                raise InvalidInputError(f"vertex {i} weights must be >= 0 and sum to 1", "weights")
            self.weights.append(infl)
            for j, (b, x) in enumerate(infl):
                bones[i, j], w[i, j] = b, x
        self.influence_bones = bones
        self.influence_weights = w

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=int), [])

    def __len__(self):
        return len(self.vertices)

    def max_bone(self):
        return max((b for infl in self.weights for b, _ in infl), default=-1)


def skin(mesh, transforms):
    """Linear blend skinning: ``v' = sum_b w_b (T_b @ T_b,rest^-1)(v)``."""
    if mesh.max_bone() >= len(transforms):
        raise InvalidInputError(
            f"weights reference bone {mesh.max_bone()} but only {len(transforms)} exist", "weights")
    out = np.zeros_like(mesh.vertices)
    for j in range(MAX_INFLUENCES):
        b = mesh.influence_bones[:, j]
        w = mesh.influence_weights[:, j]
        local = mesh.vertices - transforms.rest_heads[b]
        moved = np.einsum("nij,nj->ni", transforms.rotations[b], local) + transforms.translations[b]
        out += w[:, None] * moved
    return out


@dataclass(frozen=True)
class KeypointBinding:
    """Anchor of a named keypoint: a fraction along a bone, or a point on a face."""

    keypoint_id: str
    bone: int | None = None
    fraction: float | None = None
    face: int | None = None
    barycentric: tuple | None = None

    def __post_init__(self):
        on_bone = self.bone is not None
        on_face = self.face is not None
        if on_bone == on_face:
            raise InvalidInputError(
                f"keypoint {self.keypoint_id!r} needs exactly one of bone or face", "bindings")
        if on_bone:
            t = 0.0 if self.fraction is None else float(self.fraction)
            if not 0.0 <= t <= 1.0:
                raise InvalidInputError(
                    f"keypoint {self.keypoint_id!r} fraction {t} outside [0, 1]", "bindings.t")
            object.__setattr__(self, "fraction", t)
        else:
            bc = tuple(float(x) for x in (self.barycentric or ()))
            if len(bc) != 3 or min(bc) < 0 or abs(sum(bc) - 1.0) > 1e-6:
                raise InvalidInputError(
                    f"keypoint {self.keypoint_id!r} barycentric coordinates invalid",
                    "bindings.barycentric")
            object.__setattr__(self, "barycentric", bc)


@dataclass(eq=False)
class BoundPoints:
    """Points expressed as fixed linear combinations of bone-rigid points.

    Point ``k`` is ``sum_j mix[k, j] * (R[bone[j]] @ offset[j] + t[bone[j]])``,
    where offsets are rest positions relative to the bone head. Every row of
    ``mix`` sums to one, so translating all bones translates every point.
    """

    ids: list
    bone: np.ndarray  # (J,)
    offset: np.ndarray  # (J, 3)
    mix: np.ndarray  # (K, J)

    def evaluate(self, rotations, translations):
        P = np.einsum("jab,jb->ja", rotations[self.bone], self.offset) + translations[self.bone]
        return self.mix @ P, P


def compile_bindings(skeleton, mesh, bindings):
    ids, bone, offset, rows = [], [], [], []
    seen = set()
    for bd in bindings:
        if bd.keypoint_id in seen:
            raise InvalidInputError(f"duplicate keypoint id {bd.keypoint_id!r}", "bindings")
        seen.add(bd.keypoint_id)
        ids.append(bd.keypoint_id)
        terms = []
        if bd.bone is not None:
            if not 0 <= bd.bone < len(skeleton):
                raise InvalidInputError(
                    f"keypoint {bd.keypoint_id!r} references unknown bone {bd.bone}", "bindings.bone")
            h, tl = skeleton.heads[bd.bone], skeleton.tails[bd.bone]
            terms.append((bd.bone, bd.fraction * (tl - h), 1.0))
        else:
            if mesh is None or not 0 <= bd.face < len(mesh.faces):
                raise InvalidInputError(
                    f"keypoint {bd.keypoint_id!r} references unknown face {bd.face}", "bindings.face")
            for vi, beta in zip(mesh.faces[bd.face], bd.barycentric):
                for b, w in mesh.weights[vi]:
                    if not 0 <= b < len(skeleton):
                        raise InvalidInputError(f"weights reference unknown bone {b}", "weights")
                    if beta * w != 0.0:
                        terms.append((b, mesh.vertices[vi] - skeleton.heads[b], beta * w))
        rows.append([(len(bone) + j, w) for j, (_, _, w) in enumerate(terms)])
        for b, off, _ in terms:
            bone.append(b)
            offset.append(off)
    mix = np.zeros((len(ids), len(bone)))
    for k, row in enumerate(rows):
        for j, w in row:
            mix[k, j] = w
    return BoundPoints(ids, np.array(bone, dtype=int), np.array(offset).reshape(-1, 3), mix)


def compile_vertices(skeleton, mesh):
    """Every mesh vertex as a :class:`BoundPoints` row (for silhouette sampling)."""
    bone, offset, rows = [], [], []
    for vi, infl in enumerate(mesh.weights):
        row = []
        for b, w in infl:
            row.append((len(bone), w))
            bone.append(b)
            offset.append(mesh.vertices[vi] - skeleton.heads[b])
        rows.append(row)
    mix = np.zeros((len(mesh), len(bone)))
    for k, row in enumerate(rows):
        for j, w in row:
            mix[k, j] = w
    return BoundPoints(list(range(len(mesh))), np.array(bone, dtype=int),
                       np.array(offset).reshape(-1, 3), mix)


def evaluate_keypoints_3d(skeleton, pose, mesh, bindings):
    """Map keypoint id to its posed 3D position."""
    compiled = compile_bindings(skeleton, mesh, bindings)
    tf = forward_kinematics(skeleton, pose)
    X, _ = compiled.evaluate(tf.rotations, tf.translations)
    return {k: X[i] for i, k in enumerate(compiled.ids)}

