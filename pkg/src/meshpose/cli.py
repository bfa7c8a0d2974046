"""Command-line entry point.

Verbs: ``pose`` fits a rig to target keypoints, ``make-targets`` renders
synthetic targets from a ground-truth pose, ``diffusion-demo`` runs
inversion, depth selection and rewired articulation with a toy predictor, and
``validate`` checks a config and the files it names without writing anything.

Outputs are assembled in memory and written only once the whole command has
succeeded; on failure the output directory receives just ``error.json``.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import ddim, io
from .align import AlignProblem, TargetSet, optimize_pose
from .config import OUTPUT_ENV, load_config
from .depth_select import select_depth
from .errors import DivergenceError, InvalidInputError, NonFiniteGradientError
from .mvcam import make_ring_rig
from .rig import Pose, forward_kinematics, skin
from .synthetic import render_targets

log = logging.getLogger("meshpose")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3
EXIT_NO_SIGNAL = 4


class NoSignalError(RuntimeError):
    """Depth selection found no signal and no fallback depth is configured."""


# -- loading -----------------------------------------------------------------

def _cameras(cfg):
    if cfg.paths.cameras:
        return io.cameras_from_dict(io.read_json(cfg.path("cameras"), "cameras"))
    v = cfg.views
    return make_ring_rig(v.n_views, v.elevation, v.radius, v.focal, tuple(v.image_size))


def _rig(cfg):
    return io.load_rig(cfg.path("rig"), cfg.path("mesh"))


def _ground_truth(cfg, skeleton):
    return io.pose_from_dict(io.read_json(cfg.path("ground_truth_pose"), "ground_truth_pose"),
                             skeleton)


def _finish(cfg, files, report, started):
    """Hash the artifacts, add the report, and write everything."""
    report["artifacts"] = {name: io.sha256(text) for name, text in sorted(files.items())}
    report["wall_time"] = time.perf_counter() - started
    files = dict(files, **{"report.json": io.dumps(report)})
    os.makedirs(cfg.output_dir, exist_ok=True)
    for name, text in files.items():
        io.write_atomic(os.path.join(cfg.output_dir, name), text)
    return report


# -- commands ----------------------------------------------------------------

def cmd_pose(cfg):
    started = time.perf_counter()
    skeleton, mesh, bindings = _rig(cfg)
    cams = _cameras(cfg)
    targets = io.targets_from_dict(io.read_json(cfg.path("targets"), "targets"))
    problem = AlignProblem(skeleton, mesh, bindings, cams, targets,
                           Pose.identity(len(skeleton)), root_attenuation=cfg.root_attenuation)
    pose, pvr, pvt, rep = optimize_pose(problem, replace(cfg.optimizer, seed=cfg.seed))
    posed = skin(mesh, forward_kinematics(skeleton, pose))
    optim = rep.to_dict()
    optim.pop("wall_time")
    files = {
        "pose.json": io.dumps(io.pose_to_dict(pose, skeleton, pvr, pvt, cfg.root_attenuation)),
        "posed.obj": io.format_obj(posed, mesh.faces),
    }
    report = {"command": "pose", "config": cfg.echo(), "optim": optim,
              "per_view_residual": {str(v): x for v, x in enumerate(rep.per_view_loss)}}
    return _finish(cfg, files, report, started)


def cmd_make_targets(cfg):
    started = time.perf_counter()
    skeleton, mesh, bindings = _rig(cfg)
    cams = _cameras(cfg)
    gt = _ground_truth(cfg, skeleton)
    problem = AlignProblem(skeleton, mesh, bindings, cams, TargetSet(()), gt,
                           root_attenuation=cfg.root_attenuation)
    t = cfg.targets
    targets = render_targets(problem, np.random.default_rng(cfg.seed), t.noise_px, t.drop_rate)
    provenance = {"seed": cfg.seed, "noise_px": t.noise_px, "drop_rate": t.drop_rate,
                  "ground_truth_pose": io.pose_to_dict(gt, skeleton)}
    files = {"targets.json": io.dumps(io.targets_to_dict(targets, len(cams), provenance))}
    report = {"command": "make-targets", "config": cfg.echo(),
              "visible": sum(o.visible for o in targets), "observations": len(targets)}
    return _finish(cfg, files, report, started)


def _predictor(d, seed):
    scale = d.predictor_scale or None
    if d.predictor == "attention-toy":
        return ddim.AttentionToyPredictor(d.channels, d.embed_dim, n_layers=d.layers, seed=seed,
                                          n_heads=d.heads,
                                          weight_scale=0.5 if scale is None else scale)
    return ddim.make_predictor(d.predictor, (d.views, d.tokens, d.channels), d.embed_dim, seed,
                               scale)


def cmd_diffusion_demo(cfg):
    started = time.perf_counter()
    d = cfg.diffusion
    s = d.schedule
    schedule = ddim.NoiseSchedule.linear(s.steps, s.beta_start, s.beta_end)
    predictor = _predictor(d, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    z0 = rng.standard_normal((d.views, d.tokens, d.channels))
    c_orig, c_art, c_neg = (rng.standard_normal(d.embed_dim) for _ in range(3))
    c_empty = np.zeros(d.embed_dim)
    w = d.guidance_scale

    report = {"command": "diffusion-demo", "config": cfg.echo()}
    depth = d.depth
    if d.depth_selection.enabled:
        sel = select_depth(predictor, z0, d.depth_selection.candidates, c_orig, c_empty, schedule,
                           w, d.denoise_steps)
        report["depth_selection"] = sel.to_dict()
        if sel.ok:
            depth = sel.depth
        elif d.depth_selection.fallback is None:
            raise NoSignalError("depth selection found no signal and no fallback is configured")
        else:
            depth = d.depth_selection.fallback
    report["depth"] = depth

    inv = ddim.invert(z0, predictor, c_orig, c_empty, depth, schedule, w)
    start = rng.standard_normal(z0.shape) if d.independent_start else None
    art = ddim.articulate(inv, predictor, c_orig, c_art, c_neg, schedule, c_empty, w,
                          d.denoise_steps, start_latent=start, n_heads=d.heads)
    back = ddim.sample(inv.final, predictor, c_orig, c_empty, inv.timesteps[::-1], schedule, w)
    same = ddim.articulate(inv, predictor, c_orig, c_orig, c_empty, schedule, c_empty, w,
                           d.denoise_steps, n_heads=d.heads)
    checks = {
        "replay_error": float(np.abs(ddim.replay(inv, schedule) - z0).max()),
        "round_trip_error": float(np.abs(back.final - z0).max()),
        "denoise_steps": art.n_denoise_steps,
        "time_shifted_steps_ok": art.n_denoise_steps == d.denoise_steps,
        "coincident_frames_equal": bool(np.array_equal(same.latent, same.source_latent)),
    }
    checks["replay_ok"] = checks["replay_error"] < 1e-10
    if d.predictor == "zero":
        a = schedule.alphas_bar
        expect = [np.sqrt(a[int(t)] / a[0]) * z0 for t in inv.timesteps]
        checks["pure_rescaling"] = bool(all(np.allclose(x, e, rtol=1e-12, atol=1e-12)
                                            for x, e in zip(inv.latents, expect)))
    checks["all_pass"] = bool(checks["replay_ok"] and checks["time_shifted_steps_ok"]
                              and checks["coincident_frames_equal"]
                              and checks.get("pure_rescaling", True))
    report["checks"] = checks
    report["latent_change"] = float(np.abs(art.latent - art.source_latent).max())
    files = {"trajectories.json": io.dumps({
        "schedule": schedule.to_dict(),
        "inversion": inv.to_dict(),
        "source": art.source_trajectory.to_dict(),
        "articulation": art.trajectory.to_dict()})}
    return _finish(cfg, files, report, started)


def cmd_validate(cfg):
    """Load every file the config names; raises on the first schema violation."""
    summary = {"config": "ok"}
    skeleton = None
    if cfg.paths.rig or cfg.paths.mesh:
        skeleton, mesh, bindings = _rig(cfg)
        summary["rig"] = {"bones": len(skeleton), "vertices": len(mesh),
                          "bindings": len(bindings)}
    cams = _cameras(cfg)
    summary["views"] = len(cams)
    if cfg.paths.targets:
        targets = io.targets_from_dict(io.read_json(cfg.path("targets"), "targets"))
        if any(o.view_id >= len(cams) for o in targets):
            raise InvalidInputError("targets reference a view outside the camera rig",
                                    "views.view_id")
        summary["targets"] = len(targets)
    if cfg.paths.ground_truth_pose:
        if skeleton is None:
            raise InvalidInputError("a ground-truth pose needs a rig", "paths.rig")
        _ground_truth(cfg, skeleton)
        summary["ground_truth_pose"] = "ok"
    return summary


COMMANDS = {
    "pose": cmd_pose,
    "make-targets": cmd_make_targets,
    "diffusion-demo": cmd_diffusion_demo,
}


# -- entry point -------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="meshpose", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=[*COMMANDS, "validate"])
    p.add_argument("--config", required=True, help="run configuration (JSON)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p.add_argument("--pose", help="ground-truth pose JSON for make-targets")
    p.add_argument("--noise", type=float, help="pixel noise sigma for make-targets")
    p.add_argument("--drop", type=float, help="keypoint drop rate for make-targets")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(code, exc):
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if getattr(exc, "field", None):
        err["field"] = exc.field
    rep = getattr(exc, "report", None)
    if rep is not None:
        err["optim"] = rep.to_dict()
        err["optim"].pop("wall_time", None)
    return err


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = None
    try:
        cfg = load_config(args.config, out=args.out, seed=args.seed)
        if args.seed is not None and args.seed < 0:
            raise InvalidInputError("seed must be nonnegative", "seed")
        if args.pose is not None:
            cfg.paths.ground_truth_pose = os.path.abspath(args.pose)
        if args.noise is not None or args.drop is not None:
            t = cfg.targets
            cfg.targets = replace(t, noise_px=t.noise_px if args.noise is None else args.noise,
                                  drop_rate=t.drop_rate if args.drop is None else args.drop)
            if not 0.0 <= cfg.targets.drop_rate < 1.0:
                raise InvalidInputError("drop rate must be in [0, 1)", "targets.drop_rate")
            if cfg.targets.noise_px < 0:
                raise InvalidInputError("noise sigma must be >= 0", "targets.noise_px")
        if args.command == "validate":
            print(json.dumps(cmd_validate(cfg), sort_keys=True))
            return EXIT_OK
        report = COMMANDS[args.command](cfg)
        log.info("wrote %s", ", ".join(sorted(report["artifacts"])))
        return EXIT_OK
    except InvalidInputError as exc:
        code, err = EXIT_INVALID, exc
    except (DivergenceError, NonFiniteGradientError) as exc:
        code, err = EXIT_DIVERGED, exc
    except NoSignalError as exc:
        code, err = EXIT_NO_SIGNAL, exc
    print(f"error: {err}", file=sys.stderr)
    if args.command != "validate":
        out = cfg.output_dir if cfg is not None else args.out or os.environ.get(OUTPUT_ENV)
        if out:
            os.makedirs(out, exist_ok=True)
            io.write_atomic(os.path.join(out, "error.json"), io.dumps(_error(code, err)))
    return code


if __name__ == "__main__":
    sys.exit(main())
