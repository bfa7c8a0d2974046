"""Run configuration: nested dataclasses loaded from a JSON document.

Unknown keys and wrongly typed values are rejected with the dotted path of
the field. Relative file paths resolve against the config file's directory.
"""

import os
from dataclasses import asdict, dataclass, field, fields

from .align import DEFAULT_ROOT_ATTENUATION, OptimizerConfig
from .ddim import DEFAULT_GUIDANCE, DEFAULT_STEPS
from .depth_select import DEFAULT_CANDIDATES
from .errors import InvalidInputError
from .io import read_json

OUTPUT_ENV = "MESHPOSE_OUT"


@dataclass
class PathsConfig:
    rig: str = ""
    mesh: str = ""
    cameras: str = ""
    targets: str = ""
    ground_truth_pose: str = ""


@dataclass
class ViewsConfig:
    """Ring rig used when no cameras file is given."""

    n_views: int = 8
    elevation: float = 0.3
    radius: float = 5.0
    focal: float = 640.0
    image_size: list = field(default_factory=lambda: [512, 512])


@dataclass
class TargetsConfig:
    noise_px: float = 0.0
    drop_rate: float = 0.0


@dataclass
class ScheduleConfig:
    steps: int = DEFAULT_STEPS
    beta_start: float = 8.5e-4
    beta_end: float = 1.2e-2


@dataclass
class DepthSelectionConfig:
    enabled: bool = True
    candidates: list = field(default_factory=lambda: list(DEFAULT_CANDIDATES))
    fallback: int = field(default=25, metadata={"nullable": True})


@dataclass
class DiffusionConfig:
    predictor: str = "attention-toy"
    predictor_scale: float = 0.0
    views: int = 8
    tokens: int = 4
    channels: int = 8
    embed_dim: int = 8
    layers: int = 1
    heads: int = 1
    depth: int = 25
    guidance_scale: float = DEFAULT_GUIDANCE
    denoise_steps: int = DEFAULT_STEPS
    independent_start: bool = False
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    depth_selection: DepthSelectionConfig = field(default_factory=DepthSelectionConfig)


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "out"
    root_attenuation: float = DEFAULT_ROOT_ATTENUATION
    paths: PathsConfig = field(default_factory=PathsConfig)
    views: ViewsConfig = field(default_factory=ViewsConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    targets: TargetsConfig = field(default_factory=TargetsConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    base_dir: str = field(default=".", metadata={"internal": True})

    def path(self, name):
        p = getattr(self.paths, name)
        if not p:
            raise InvalidInputError(f"config does not name a {name} file", f"paths.{name}")
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def echo(self):
        """Configuration as recorded in reports (no output location, no base dir)."""
        d = asdict(self)
        d.pop("output_dir")
        d.pop("base_dir")
        return d


def _typecheck(value, default, where):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise InvalidInputError(f"config field {where} has the wrong type", where)
    return value


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise InvalidInputError(f"config section {where or 'root'} must be an object",
                                where or "config")
    known = {f.name: f for f in fields(cls) if not f.metadata.get("internal")}
    for key in doc:
        if key not in known:
            raise InvalidInputError(f"unknown config field {where + key}", where + key)
    default = cls()
    kwargs = {}
    for name, value in doc.items():
        d = getattr(default, name)
        if value is None and known[name].metadata.get("nullable"):
            kwargs[name] = None
        elif hasattr(d, "__dataclass_fields__"):
            kwargs[name] = _build(type(d), value, f"{where}{name}.")
        else:
            kwargs[name] = _typecheck(value, d, where + name)
    try:
        return cls(**kwargs)
    except InvalidInputError as exc:
        raise InvalidInputError(str(exc), where + (exc.field or "")) from None


def config_from_dict(doc, base_dir="."):
    cfg = _build(RunConfig, doc, "")
    cfg.base_dir = base_dir
    _validate(cfg)
    return cfg


def load_config(path, out=None, seed=None):
    """Load a config file and apply overrides (``--out`` beats the env var beats the file)."""
    doc = read_json(path, "config")
    cfg = config_from_dict(doc, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        cfg.seed = seed
    env = os.environ.get(OUTPUT_ENV)
    if out is not None:
        cfg.output_dir = out
    elif env:
        cfg.output_dir = env
    return cfg


def _validate(cfg):
    def need(cond, msg, where):
        if not cond:
            raise InvalidInputError(msg, where)

    need(cfg.seed >= 0, "seed must be nonnegative", "seed")
    need(0.0 <= cfg.root_attenuation <= 1.0, "root_attenuation must be in [0, 1]",
         "root_attenuation")
    v = cfg.views
    need(v.n_views >= 1, "n_views must be >= 1", "views.n_views")
    need(v.radius > 0 and v.focal > 0, "radius and focal must be positive", "views")
    need(len(v.image_size) == 2 and all(isinstance(x, int) and x > 0 for x in v.image_size),
         "image_size must be two positive integers", "views.image_size")
    need(cfg.targets.noise_px >= 0, "noise_px must be >= 0", "targets.noise_px")
    need(0.0 <= cfg.targets.drop_rate < 1.0, "drop_rate must be in [0, 1)", "targets.drop_rate")
    o = cfg.optimizer
    need(o.learning_rate > 0, "learning_rate must be positive", "optimizer.learning_rate")
    need(o.window >= 1, "window must be >= 1", "optimizer.window")
    d = cfg.diffusion
    s = d.schedule
    need(s.steps >= 1, "schedule needs at least one step", "diffusion.schedule.steps")
    need(0 < s.beta_start <= s.beta_end < 1, "betas must satisfy 0 < start <= end < 1",
         "diffusion.schedule")
    need(0 <= d.depth <= s.steps, f"depth must be in 0..{s.steps}", "diffusion.depth")
    need(d.denoise_steps >= 1, "denoise_steps must be >= 1", "diffusion.denoise_steps")
    for name in ("views", "tokens", "channels", "embed_dim", "heads"):
        need(getattr(d, name) >= 1, f"{name} must be >= 1", f"diffusion.{name}")
    need(d.layers >= 0, "layers must be >= 0", "diffusion.layers")
    need(d.channels % d.heads == 0, "channels must split evenly into heads", "diffusion.heads")
    ds = d.depth_selection
    need(len(ds.candidates) > 0 and all(isinstance(c, int) and not isinstance(c, bool)
                                        and 0 <= c <= s.steps for c in ds.candidates),
         f"candidates must be integers in 0..{s.steps}", "diffusion.depth_selection.candidates")
    need(ds.fallback is None or 0 <= ds.fallback <= s.steps, "fallback depth out of range",
         "diffusion.depth_selection.fallback")
