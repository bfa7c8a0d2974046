"""JSON and OBJ readers/writers for rigs, cameras, targets and poses.

Floats are written with Python's shortest round-trip representation, so a
value read back is bit-identical to the value written. Schema violations
raise :class:`InvalidInputError` with a dotted path to the offending field.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from .align import KeypointObservation, TargetSet
from .errors import InvalidInputError
from .mvcam import Camera, ViewRig
from .rig import Bone, KeypointBinding, Pose, Skeleton, SkinnedMesh


def _plain(obj):
    """Recursively convert numpy containers and scalars to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def dumps(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def sha256(data):
    if isinstance(data, str):
        data = data.encode()
    return hashlib.sha256(data).hexdigest()


def read_json(path, what="document"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InvalidInputError(f"{what} file not found: {path}", what) from None
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{what} file {path} is not valid JSON: {exc}", what) from None


def write_atomic(path, text):
    """Write text to ``path`` through a temporary file and rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- schema helpers ----------------------------------------------------------

def _get(doc, key, where, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise InvalidInputError(f"missing field {where}.{key}", f"{where}.{key}")
    val = doc[key]
    if kind is not None and not _is(val, kind):
        raise InvalidInputError(f"field {where}.{key} must be {kind}", f"{where}.{key}")
    return val


def _is(val, kind):
    if kind == "number":
        return isinstance(val, (int, float)) and not isinstance(val, bool)
    if kind == "int":
        return isinstance(val, int) and not isinstance(val, bool)
    if kind == "str":
        return isinstance(val, str)
    if kind == "bool":
        return isinstance(val, bool)
    if kind == "list":
        return isinstance(val, list)
    return True


def _vec(doc, key, where, n):
    val = _get(doc, key, where, "list")
    if len(val) != n or not all(_is(x, "number") for x in val):
        raise InvalidInputError(f"field {where}.{key} must be {n} numbers", f"{where}.{key}")
    return np.array(val, dtype=float)


def _wrap(fn, where):
    """Re-label invariant violations raised by constructors with a document path."""
    try:
        return fn()
    except InvalidInputError as exc:
        field = exc.field if exc.field and exc.field.startswith(where) else \
            f"{where}.{exc.field}" if exc.field else where
        raise InvalidInputError(str(exc), field) from None


# -- rig ---------------------------------------------------------------------

def read_obj(path):
    """Vertices and triangles from a Wavefront OBJ (v/f records; other records ignored)."""
    verts, faces = [], []
    try:
        fh = open(path)
    except FileNotFoundError:
        raise InvalidInputError(f"mesh file not found: {path}", "mesh") from None
    with fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise ValueError("only triangles are supported")
                    faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{n}: {exc}", "mesh") from None
    return np.array(verts, dtype=float).reshape(-1, 3), np.array(faces, dtype=int).reshape(-1, 3)


def format_obj(vertices, faces):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, dtype=float)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=int)]
    return "\n".join(lines) + "\n"


def rig_from_dict(doc, vertices, faces):
    """Skeleton, skinned mesh and bindings from a rig document plus OBJ geometry.

    Bones may appear in any order; they are sorted parents-first and every
    bone reference in weights and bindings is remapped.
    """
    bones_doc = _get(doc, "bones", "rig", "list")
    bones = []
    for i, b in enumerate(bones_doc):
        w = f"bones[{i}]"
        parent = b.get("parent") if isinstance(b, dict) else None
        if parent is not None and not _is(parent, "int"):
            raise InvalidInputError(f"field {w}.parent must be an integer or null", f"{w}.parent")
        bones.append(_wrap(lambda: Bone(_get(b, "id", w, "int"), parent,
                                        _vec(b, "rest_head", w, 3), _vec(b, "rest_tail", w, 3),
                                        b.get("name", "")), w))
    skeleton, remap = _wrap(lambda: Skeleton.from_unsorted(bones), "bones")

    def bone_ref(bid, where):
        if bid not in remap:
            raise InvalidInputError(f"{where} references unknown bone {bid}", where)
        return remap[bid]

    weights_doc = _get(doc, "weights", "rig", "list")
    if len(weights_doc) != len(vertices):
        raise InvalidInputError(f"{len(weights_doc)} weight rows for {len(vertices)} vertices",
                                "weights")
    weights = []
    for i, row in enumerate(weights_doc):
        w = f"weights[{i}]"
        if not isinstance(row, list) or not all(
                isinstance(p, list) and len(p) == 2 and _is(p[0], "int") and _is(p[1], "number")
                for p in row):
            raise InvalidInputError(f"field {w} must be a list of [bone, weight] pairs", w)
        weights.append([(bone_ref(b, w), float(x)) for b, x in row])
    mesh = _wrap(lambda: SkinnedMesh(vertices, faces, weights), "weights")
    if mesh.max_bone() >= len(skeleton):
        raise InvalidInputError("weights reference a bone outside the skeleton", "weights")

    bindings = []
    for i, b in enumerate(_get(doc, "bindings", "rig", "list")):
        w = f"bindings[{i}]"
        kid = _get(b, "keypoint_id", w, "str")
        if "bone" in b:
            bindings.append(_wrap(lambda: KeypointBinding(
                kid, bone=bone_ref(_get(b, "bone", w, "int"), f"{w}.bone"),
                fraction=float(_get(b, "fraction", w, "number"))), w))
        elif "face" in b:
            bindings.append(_wrap(lambda: KeypointBinding(
                kid, face=_get(b, "face", w, "int"),
                barycentric=tuple(_vec(b, "barycentric", w, 3))), w))
        else:
            raise InvalidInputError(f"{w} needs either bone/fraction or face/barycentric", w)
    ids = [b.keypoint_id for b in bindings]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("duplicate keypoint_id in bindings", "bindings.keypoint_id")
    for i, b in enumerate(bindings):
        if b.face is not None and b.face >= len(mesh.faces):
            raise InvalidInputError(f"binding face {b.face} out of range", f"bindings[{i}].face")
    return skeleton, mesh, tuple(bindings)


def rig_to_dict(skeleton, mesh, bindings):
    out = {"bones": [{"id": b.id, "name": b.name, "parent": b.parent,
                      "rest_head": b.rest_head, "rest_tail": b.rest_tail} for b in skeleton],
           "bindings": [], "weights": []}
    for kb in bindings:
        if kb.bone is not None:
            out["bindings"].append({"keypoint_id": kb.keypoint_id, "bone": kb.bone,
                                    "fraction": kb.fraction})
        else:
            out["bindings"].append({"keypoint_id": kb.keypoint_id, "face": kb.face,
                                    "barycentric": list(kb.barycentric)})
    for bones, ws in zip(mesh.influence_bones, mesh.influence_weights):
        out["weights"].append([[int(b), float(w)] for b, w in zip(bones, ws) if w > 0])
    return out


def load_rig(rig_path, mesh_path):
    verts, faces = read_obj(mesh_path)
    return rig_from_dict(read_json(rig_path, "rig"), verts, faces)


# -- cameras -----------------------------------------------------------------

def cameras_from_dict(doc):
    cams = []
    for i, c in enumerate(_get(doc, "cameras", "cameras", "list")):
        w = f"cameras[{i}]"
        size = _get(c, "image_size", w, "list")
        if len(size) != 2 or not all(_is(x, "int") for x in size):
            raise InvalidInputError(f"field {w}.image_size must be two integers", f"{w}.image_size")
        cams.append(_wrap(lambda: Camera(
            _get(c, "view_id", w, "int"), float(_get(c, "azimuth", w, "number")),
            float(_get(c, "elevation", w, "number")), float(_get(c, "radius", w, "number")),
            float(_get(c, "focal", w, "number")), tuple(_vec(c, "principal", w, 2)),
            tuple(size)), w))
    return _wrap(lambda: ViewRig(cams), "cameras")


def cameras_to_dict(rig):
    return {"cameras": [{"view_id": c.view_id, "azimuth": c.azimuth, "elevation": c.elevation,
                         "radius": c.radius, "focal": c.focal, "principal": list(c.principal),
                         "image_size": list(c.image_size)} for c in rig]}


# -- targets -----------------------------------------------------------------

def targets_from_dict(doc):
    obs = []
    for i, v in enumerate(_get(doc, "views", "targets", "list")):
        w = f"views[{i}]"
        vid = _get(v, "view_id", w, "int")
        for j, k in enumerate(_get(v, "keypoints", w, "list")):
            wk = f"{w}.keypoints[{j}]"
            visible = k.get("visible", True) if isinstance(k, dict) else True
            conf = k.get("confidence", 1.0) if isinstance(k, dict) else 1.0
            if not _is(visible, "bool"):
                raise InvalidInputError(f"field {wk}.visible must be a boolean", f"{wk}.visible")
            if not _is(conf, "number"):
                raise InvalidInputError(f"field {wk}.confidence must be a number",
                                        f"{wk}.confidence")
            u, vv = _get(k, "u", wk), _get(k, "v", wk)
            pos = [np.nan if x is None else x for x in (u, vv)]
            if not all(_is(x, "number") for x in pos):
                raise InvalidInputError(f"field {wk}.u/v must be numbers", f"{wk}.u")
            obs.append(_wrap(lambda: KeypointObservation(
                vid, _get(k, "id", wk, "str"), np.array(pos, dtype=float), visible,
                float(conf)), wk))
    return _wrap(lambda: TargetSet(tuple(obs)), "targets")


def targets_to_dict(targets, n_views=None, provenance=None):
    views = {}
    for o in targets:
        views.setdefault(o.view_id, []).append(
            {"id": o.keypoint_id, "u": o.position[0], "v": o.position[1],
             "visible": bool(o.visible), "confidence": o.confidence})
    ids = range(n_views) if n_views is not None else sorted(views)
    out = {"views": [{"view_id": v, "keypoints": views.get(v, [])} for v in ids]}
    if provenance is not None:
        out["provenance"] = provenance
    return out


# -- pose --------------------------------------------------------------------

def pose_from_dict(doc, skeleton):
    rot = _get(doc, "rotations", "pose", "list")
    if len(rot) != len(skeleton) or not all(
            isinstance(r, list) and len(r) == 3 and all(_is(x, "number") for x in r) for r in rot):
        raise InvalidInputError(f"pose.rotations must be {len(skeleton)} 3-vectors",
                                "pose.rotations")
    tr = _vec(doc, "root_translation", "pose", 3) if "root_translation" in doc else np.zeros(3)
    pose = _wrap(lambda: Pose(np.array(rot, dtype=float), tr), "pose")
    if not np.all(np.isfinite(pose.rotations)):
        raise InvalidInputError("pose rotations must be finite", "pose.rotations")
    return pose


def pose_to_dict(pose, skeleton, per_view_rotation=None, per_view_translation=None,
                 attenuation=None):
    out = {"bones": [b.name for b in skeleton], "rotations": pose.rotations,
           "root_translation": pose.root_translation}
    if per_view_rotation is not None:
        out["per_view_root_rotation"] = per_view_rotation
        out["per_view_root_translation"] = per_view_translation
        out["root_attenuation"] = attenuation
    return out
