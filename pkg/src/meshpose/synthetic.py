"""Synthetic rigs, poses and keypoint targets for controlled experiments.

The quadruped generator builds a pelvis root with a spine, a neck/head chain,
four legs and an optional tail. Every bone gets a thin triangular-prism tube
of mesh, a keypoint at its tail and a keypoint on its surface, so each bone's
full 3-DoF rotation (twist included) is observable from projected keypoints.
"""

import os
from dataclasses import dataclass

import numpy as np

from .align import KeypointObservation, TargetSet, render_keypoints
from .errors import InvalidInputError
from .rig import Bone, KeypointBinding, Pose, Skeleton, SkinnedMesh


@dataclass
class SyntheticRig:
    skeleton: Skeleton
    mesh: SkinnedMesh
    bindings: tuple


def _unit(v):
    return v / np.linalg.norm(v)


def quadruped_skeleton(rng, n_bones):
    """Random quadruped-topology skeleton with exactly ``n_bones`` bones (8..21)."""
    if not 8 <= n_bones <= 21:
        raise InvalidInputError("quadruped rigs support 8..21 bones", "n_bones")
    extras = n_bones - 7
    feasible = [k for k in range(3) if 0 <= extras - 4 * k <= 6]
    leg_levels = int(rng.choice(feasible))
    extras -= 4 * leg_levels
    caps = {"spine": 2, "head": 1, "tail": 3}
    counts = dict.fromkeys(caps, 0)
    for _ in range(extras):
        open_ = [k for k in caps if counts[k] < caps[k]]
        counts[open_[rng.integers(len(open_))]] += 1
    spine, head, tail = counts["spine"], counts["head"], counts["tail"]

    bones = []

    def add(parent, head_pos, tail_pos, name):
        bones.append(Bone(len(bones), parent, np.asarray(head_pos, float),
                          np.asarray(tail_pos, float), name))
        return len(bones) - 1

    body_len = rng.uniform(1.0, 1.6)
    hip_h = rng.uniform(0.8, 1.1)
    n_spine = 1 + spine
    seg = body_len / (n_spine + 1)
    p = np.array([-body_len / 2, hip_h, 0.0])
    root = add(None, p, p + [seg, 0.02, 0.0], "pelvis")
    last, pos = root, p + [seg, 0.02, 0.0]
    for i in range(n_spine):
        nxt = pos + [seg, rng.uniform(-0.03, 0.05), 0.0]
        last = add(last, pos, nxt, f"spine{i}")
        pos = nxt
    chest, chest_pos = last, pos
    neck_dir = _unit(np.array([0.6, 0.8, 0.0]) + rng.uniform(-0.1, 0.1, 3) * [1, 1, 0])
    hpos, hp = chest_pos, chest
    for i in range(1 + head):
        L = rng.uniform(0.25, 0.4)
        nxt = hpos + L * (neck_dir if i == 0 else _unit(np.array([1.0, -0.2, 0.0])))
        hp = add(hp, hpos, nxt, "neck" if i == 0 and head else "head")
        hpos = nxt
    half_w = rng.uniform(0.15, 0.25)
    for side, sz in (("l", 1.0), ("r", -1.0)):
        for where, parent, anchor in (("front", chest, chest_pos), ("hind", root, p)):
            start = anchor + [0.0, -0.05, sz * half_w]
            n_seg = 1 + leg_levels
            L = (anchor[1] - 0.05) / n_seg
            par = parent
            for i in range(n_seg):
                kink = rng.uniform(-0.08, 0.08)
                end = start + [kink, -L, 0.02 * sz]
                par = add(par, start, end, f"{where}_{side}{i}")
                start = end
    tpos, tp = p, root
    for i in range(tail):
        L = rng.uniform(0.2, 0.35)
        nxt = tpos + L * _unit(np.array([-1.0, rng.uniform(-0.3, 0.4), rng.uniform(-0.1, 0.1)]))
        tp = add(tp, tpos, nxt, f"tail{i}")
        tpos = nxt
    # center the bounding box on the origin
    pts = np.concatenate([[b.rest_head for b in bones], [b.rest_tail for b in bones]])
    shift = -(pts.min(axis=0) + pts.max(axis=0)) / 2
    return Skeleton([Bone(b.id, b.parent, b.rest_head + shift, b.rest_tail + shift, b.name)
                     for b in bones])


def tube_mesh(skeleton, blend=0.3, radius=(0.1, 0.2)):
    """Triangular-prism tube around every bone.

    The tube radius is ``radius[0] + radius[1] * bone_length``. Ring vertices
    at the head blend ``blend`` of their weight onto the parent bone; tail
    vertices are rigid.
    """
    verts, faces, weights = [], [], []
    for b in skeleton:
        axis = b.rest_tail - b.rest_head
        L = np.linalg.norm(axis)
        a = axis / L
        helper = np.array([0.0, 1.0, 0.0]) if abs(a[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = _unit(np.cross(a, helper))
        e2 = np.cross(a, e1)
        r = radius[0] + radius[1] * L
        base = len(verts)
        for end, pt in ((0, b.rest_head), (1, b.rest_tail)):
            for k in range(3):
                ang = 2 * np.pi * k / 3 + 0.3 * end
                verts.append(pt + r * (np.cos(ang) * e1 + np.sin(ang) * e2))
                if end == 0 and b.parent is not None and blend > 0:
                    weights.append([(b.id, 1.0 - blend), (b.parent, blend)])
                else:
                    weights.append([(b.id, 1.0)])
        for k in range(3):
            k2 = (k + 1) % 3
            faces.append([base + k, base + k2, base + 3 + k])
            faces.append([base + k2, base + 3 + k2, base + 3 + k])
        faces.append([base, base + 2, base + 1])
        faces.append([base + 3, base + 4, base + 5])
    return SkinnedMesh(np.array(verts), np.array(faces), weights)


def tube_bindings(skeleton, rng, surface_per_bone=3):
    """Tail keypoint plus ``surface_per_bone`` keypoints on the side faces of each tube.

    Side faces alternate head-heavy (even) and tail-heavy (odd); tail-heavy
    faces are used first.
    """
    if not 0 <= surface_per_bone <= 6:
        raise InvalidInputError("surface_per_bone must be in 0..6", "surface_per_bone")
    order = [1, 3, 5, 0, 2, 4]
    out = []
    for b in skeleton:
        out.append(KeypointBinding(f"{b.name}_tip", bone=b.id, fraction=1.0))
        for f in sorted(order[:surface_per_bone]):
            w = rng.dirichlet([2.0, 2.0, 2.0])
            out.append(KeypointBinding(f"{b.name}_skin{f}", face=8 * b.id + f,
                                       barycentric=tuple(w)))
    return tuple(out)


def quadruped_rig(rng, n_bones, surface_per_bone=6, radius=(0.15, 0.3)):
    sk = quadruped_skeleton(rng, n_bones)
    return SyntheticRig(sk, tube_mesh(sk, radius=radius),
                        tube_bindings(sk, rng, surface_per_bone))


def random_axis_angle(rng, max_angle):
    axis = _unit(rng.standard_normal(3))
    return axis * rng.uniform(0.0, max_angle)


def random_pose(rng, skeleton, max_angle=0.5, root_angle=0.3, root_shift=0.05):
    rot = np.stack([random_axis_angle(rng, max_angle) for _ in skeleton])
    rot[skeleton.root] = random_axis_angle(rng, root_angle)
    return Pose(rot, rng.normal(0.0, root_shift, 3))


def render_targets(problem, rng=None, noise_px=0.0, drop_rate=0.0):
    """Targets rendered from the problem's current parameters.

    Adds isotropic Gaussian pixel noise and drops keypoints independently
    (dropped keypoints are kept, marked invisible).
    """
    if not 0.0 <= drop_rate < 1.0:
        raise InvalidInputError("drop rate must be in [0, 1)", "drop_rate")
    if noise_px < 0:
        raise InvalidInputError("noise sigma must be >= 0", "noise")
    if rng is None:
        rng = np.random.default_rng(0)
    obs = []
    for v in range(problem.n_views):
        rendered = render_keypoints(problem, v)
        for kid in sorted(rendered):
            uv, vis = rendered[kid]
            if noise_px:
                uv = uv + rng.normal(0.0, noise_px, 2)
            if drop_rate and rng.random() < drop_rate:
                vis = False
            pos = uv if np.all(np.isfinite(uv)) else np.zeros(2)
            obs.append(KeypointObservation(v, kid, pos, bool(vis), 1.0))
    return TargetSet(tuple(obs))


def write_case(directory, seed=0, n_bones=12, max_angle=0.5):
    """Write a random quadruped rig, its mesh, a ground-truth pose and a run config.

    Returns the config path. The config points at ``targets.json`` in the
    same directory, which ``make-targets`` can produce.
    """
    from . import io

    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    rig = quadruped_rig(rng, n_bones)
    gt = random_pose(rng, rig.skeleton, max_angle=max_angle)
    files = {
        "rig.json": io.dumps(io.rig_to_dict(rig.skeleton, rig.mesh, rig.bindings)),
        "mesh.obj": io.format_obj(rig.mesh.vertices, rig.mesh.faces),
        "gt_pose.json": io.dumps(io.pose_to_dict(gt, rig.skeleton)),
        "config.json": io.dumps({
            "seed": seed,
            "paths": {"rig": "rig.json", "mesh": "mesh.obj", "targets": "targets.json",
                      "ground_truth_pose": "gt_pose.json"},
            "optimizer": {"max_iterations": 1000, "window": 100, "tol": 1e-12}}),
    }
    for name, text in files.items():
        io.write_atomic(os.path.join(directory, name), text)
    return os.path.join(directory, "config.json")
