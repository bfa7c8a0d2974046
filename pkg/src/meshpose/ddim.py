"""Deterministic DDIM inversion and sampling with pluggable noise predictors.

Latents are ``(views, tokens, channels)`` arrays. A noise predictor is any
object with ``predict(z, embedding, t, attention=None)`` returning an array of
the latent's shape; ``attention`` is an optional hook
``attention(layer, qkv) -> output`` that replaces the predictor's
self-attention computation (predictors without attention layers ignore it).
Timesteps may be fractional; the schedule interpolates ``alpha_bar`` in log
space between integer steps.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CacheMissError, InvalidInputError
from .rewired_attention import QKV, joint_attention, rewired_attention

DEFAULT_STEPS = 50
DEFAULT_GUIDANCE = 7.5
CONDITIONING_ROLES = ("c_orig", "c_empty", "c_articulation", "c_negative", "e_p", "e_null")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal fractions ``alpha_bar[t]`` for ``t = 0..T``."""

    alphas_bar: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas_bar, dtype=float)
        if a.ndim != 1 or len(a) < 2:
            raise InvalidInputError("schedule needs at least two alpha_bar values", "alphas_bar")
        if not (np.all(a > 0) and np.all(a <= 1)):
            raise InvalidInputError("alpha_bar values must lie in (0, 1]", "alphas_bar")
        if not np.all(np.diff(a) < 0):
            raise InvalidInputError("alpha_bar must be strictly decreasing", "alphas_bar")
        object.__setattr__(self, "alphas_bar", a)
        object.__setattr__(self, "_log", np.log(a))

    @classmethod
    def linear(cls, steps=DEFAULT_STEPS, beta_start=8.5e-4, beta_end=1.2e-2):
        betas = np.linspace(beta_start, beta_end, steps)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @property
    def T(self):
        return len(self.alphas_bar) - 1

    def alpha_bar(self, t):
        if not 0 <= t <= self.T:
            raise InvalidInputError(f"timestep {t} outside [0, {self.T}]", "t")
        return float(np.exp(np.interp(t, np.arange(self.T + 1), self._log)))

    def to_dict(self):
        return {"alphas_bar": self.alphas_bar.tolist()}


@dataclass(frozen=True, eq=False)
class Conditioning:
    embedding: np.ndarray
    role: str = "c_orig"

    def __post_init__(self):
        e = np.asarray(self.embedding, dtype=float).ravel()
        if not np.all(np.isfinite(e)):
            raise InvalidInputError("conditioning embedding must be finite", "embedding")
        if self.role not in CONDITIONING_ROLES:
            raise InvalidInputError(f"unknown conditioning role {self.role!r}", "role")
        object.__setattr__(self, "embedding", e)


def _emb(c):
    return c.embedding if isinstance(c, Conditioning) else np.asarray(c, dtype=float).ravel()


@dataclass(eq=False)
class DiffusionTrajectory:
    """Latents at each visited timestep and the noise used to leave each one.

    ``noise[i]`` is the prediction that stepped ``latents[i]`` (at
    ``timesteps[i]``) to ``latents[i + 1]``.
    """

    timesteps: np.ndarray
    latents: list
    noise: list = field(default_factory=list)

    def __post_init__(self):
        self.timesteps = np.asarray(self.timesteps, dtype=float)
        if len(self.latents) != len(self.timesteps) or len(self.noise) != len(self.latents) - 1:
            raise InvalidInputError("trajectory lengths are inconsistent", "trajectory")
        d = np.diff(self.timesteps)
        if len(d) and not (np.all(d >= 0) or np.all(d <= 0)):
            raise InvalidInputError("trajectory timesteps must be monotone", "timesteps")
        shape = np.shape(self.latents[0])
        if any(np.shape(x) != shape for x in list(self.latents) + list(self.noise)):
            raise InvalidInputError("trajectory tensors change shape", "trajectory")

    def __len__(self):
        return len(self.noise)

    @property
    def final(self):
        return self.latents[-1]

    def to_dict(self):
        return {"timesteps": self.timesteps.tolist(),
                "latents": [np.asarray(x).tolist() for x in self.latents],
                "noise": [np.asarray(x).tolist() for x in self.noise]}


# -- predictors --------------------------------------------------------------

class ZeroPredictor:
    n_layers = 0

    def predict(self, z, embedding, t, attention=None):
        return np.zeros_like(np.asarray(z, dtype=float))


class LinearPredictor:
    """``eps = A @ vec(z) + gain(t) * B @ e`` on flattened latents.

    ``A`` and ``B`` may be None (treated as zero). ``gain`` defaults to 1.
    """

    n_layers = 0

    def __init__(self, A=None, B=None, gain=None):
        self.A = None if A is None else np.asarray(A, dtype=float)
        self.B = None if B is None else np.asarray(B, dtype=float)
        self.gain = gain

    def predict(self, z, embedding, t, attention=None):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.size)
        if self.A is not None:
            if self.A.shape != (z.size, z.size):
                raise InvalidInputError(f"A is {self.A.shape}, latent has {z.size} entries", "A")
            out = self.A @ z.ravel()
        if self.B is not None:
            e = _emb(embedding)
            if self.B.shape != (z.size, e.size):
                raise InvalidInputError(f"B is {self.B.shape}, expected {(z.size, e.size)}", "B")
            g = 1.0 if self.gain is None else float(self.gain(t))
            out = out + g * (self.B @ e)
        return out.reshape(z.shape)


class AttentionToyPredictor:
    """Linear projections around multi-view self-attention layers.

    ``x = z W_in + e W_e + (t / T) w_t``; each layer adds
    ``attention(x W_q, x W_k, x W_v) W_o`` to ``x``; the prediction is
    ``x W_out``. Attention is the only nonlinearity. By default every view
    attends to all views' tokens jointly.
    """

    def __init__(self, channels, embed_dim, n_layers=1, seed=0, n_heads=1, weight_scale=0.5,
                 t_ref=DEFAULT_STEPS):
        rng = np.random.default_rng(seed)
        c = channels

        def w(*shape):
            return weight_scale * rng.standard_normal(shape) / np.sqrt(shape[0])

        self.channels, self.embed_dim = c, embed_dim
        self.n_layers, self.n_heads, self.t_ref = n_layers, n_heads, t_ref
        self.W_in, self.W_e, self.w_t = w(c, c), w(embed_dim, c), w(1, c)[0]
        self.layers = [tuple(w(c, c) for _ in range(4)) for _ in range(n_layers)]
        self.W_out = w(c, c)

    def predict(self, z, embedding, t, attention=None):
        z = np.asarray(z, dtype=float)
        if z.ndim != 3 or z.shape[2] != self.channels:
            raise InvalidInputError(
                f"latent shape {z.shape} does not match {self.channels} channels", "latent")
        e = _emb(embedding)
        x = z @ self.W_in + e @ self.W_e + (t / self.t_ref) * self.w_t
        for i, (Wq, Wk, Wv, Wo) in enumerate(self.layers):
            qkv = QKV(x @ Wq, x @ Wk, x @ Wv)
            a = None if attention is None else attention(i, qkv)
            if a is None:
                a = joint_attention(qkv, self.n_heads)
            x = x + a @ Wo
        return x @ self.W_out


def make_predictor(name, shape, embed_dim, seed=0, scale=None):
    """Toy predictor by name: ``zero``, ``linear`` or ``attention-toy``."""
    rng = np.random.default_rng(seed)
    size = int(np.prod(shape))
    if name == "zero":
        return ZeroPredictor()
    if name == "linear":
        # small weights keep the guided invert/sample round trip well below 1e-6
        s = 1e-5 if scale is None else scale
        A = s * rng.standard_normal((size, size)) / np.sqrt(size)
        B = 0.1 * rng.standard_normal((size, embed_dim)) / np.sqrt(embed_dim)
        return LinearPredictor(A, B)
    if name == "attention-toy":
        return AttentionToyPredictor(shape[-1], embed_dim, seed=seed,
                                     weight_scale=0.5 if scale is None else scale)
    raise InvalidInputError(f"unknown predictor {name!r}", "predictor")


# -- sampler -----------------------------------------------------------------

def ddim_step(z, eps, t, t_next, schedule):
    """Deterministic DDIM update from ``t`` to ``t_next`` (either direction)."""
    z = np.asarray(z, dtype=float)
    if t_next == t:
        return z.copy()
    a, a_next = schedule.alpha_bar(t), schedule.alpha_bar(t_next)
    x0 = (z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
    return np.sqrt(a_next) * x0 + np.sqrt(1.0 - a_next) * eps


def guide(predictor, z, t, cond, uncond, guidance_scale=DEFAULT_GUIDANCE,
          attention_cond=None, attention_uncond=None):
    """Classifier-free guidance: ``eps_u + w (eps_c - eps_u)``."""
    ec, eu = _emb(cond), _emb(uncond)
    eps_c = predictor.predict(z, ec, t, attention=attention_cond)
    if guidance_scale == 1.0 or np.array_equal(ec, eu):
        return eps_c
    eps_u = predictor.predict(z, eu, t, attention=attention_uncond)
    return eps_u + guidance_scale * (eps_c - eps_u)


def _check_shape(eps, z):
    if np.shape(eps) != np.shape(z):
        raise InvalidInputError(
            f"predictor returned shape {np.shape(eps)} for latent {np.shape(z)}", "predictor")


def sample(z, predictor, cond, uncond, timesteps, schedule, guidance_scale=DEFAULT_GUIDANCE):
    """Run guided DDIM steps along ``timesteps`` and record the trajectory."""
    z = np.asarray(z, dtype=float)
    ts = np.asarray(timesteps, dtype=float)
    latents, noise = [z], []
    for t, t_next in zip(ts[:-1], ts[1:]):
        eps = guide(predictor, z, t, cond, uncond, guidance_scale)
        _check_shape(eps, z)
        z = ddim_step(z, eps, t, t_next, schedule)
        latents.append(z)
        noise.append(eps)
    return DiffusionTrajectory(ts, latents, noise)


def invert(z0, predictor, c_orig, c_empty, depth, schedule, guidance_scale=DEFAULT_GUIDANCE):
    """DDIM inversion of clean latents up to integer timestep ``depth``."""
    if not 0 <= depth <= schedule.T or int(depth) != depth:
        raise InvalidInputError(f"depth {depth} outside 0..{schedule.T}", "depth")
    return sample(z0, predictor, c_orig, c_empty, np.arange(int(depth) + 1), schedule,
                  guidance_scale)


def time_shifted_timesteps(depth, n_steps=DEFAULT_STEPS):
    """``n_steps`` uniform denoising steps from ``depth`` down to 0."""
    return np.linspace(float(depth), 0.0, n_steps + 1)


def reconstruct(z_start, depth, predictor, cond, uncond, schedule,
                guidance_scale=DEFAULT_GUIDANCE, n_steps=DEFAULT_STEPS):
    """Time-shifted denoising: always ``n_steps`` steps, whatever the depth."""
    return sample(z_start, predictor, cond, uncond, time_shifted_timesteps(depth, n_steps),
                  schedule, guidance_scale)


def replay(trajectory, schedule):
    """Walk a trajectory backwards reusing its recorded noise; returns the start latent."""
    z = trajectory.latents[-1]
    ts = trajectory.timesteps
    for i in range(len(trajectory) - 1, -1, -1):
        z = ddim_step(z, trajectory.noise[i], ts[i + 1], ts[i], schedule)
    return z


# -- rewired articulation ----------------------------------------------------

class SourceCache:
    """Source-branch Q/K/V keyed by (step index, layer, guidance half)."""

    def __init__(self):
        self._store = {}

    def put(self, step, layer, half, qkv):
        self._store[(step, layer, half)] = qkv

    def get(self, step, layer, half):
        try:
            return self._store[(step, layer, half)]
        except KeyError:
            raise CacheMissError(
                f"no source attention cached for step {step}, layer {layer} ({half})") from None

    def has(self, step, layer, half):
        return (step, layer, half) in self._store

    def __len__(self):
        return len(self._store)


@dataclass(eq=False)
class ArticulationResult:
    source_latent: np.ndarray
    latent: np.ndarray
    source_trajectory: DiffusionTrajectory
    trajectory: DiffusionTrajectory
    n_denoise_steps: int
    depth: float


def articulate(inversion, predictor, p_source, p_target, c_negative, schedule, c_empty=None,
               guidance_scale=DEFAULT_GUIDANCE, n_steps=DEFAULT_STEPS, start_latent=None,
               n_heads=1):
    """Lockstep source/articulation denoising with rewired self-attention.

    At every step the source branch (``p_source``, unconditional ``c_empty``)
    records its Q/K/V per layer; the articulation branch (``p_target``,
    unconditional ``c_negative``) replaces each self-attention with rewired
    attention against the cached source entries of the same step, layer and
    guidance half. Both branches start from the inversion endpoint unless
    ``start_latent`` overrides the articulation start.
    """
    depth = float(inversion.timesteps[-1])
    ts = time_shifted_timesteps(depth, n_steps)
    zs = np.asarray(inversion.final, dtype=float)
    za = zs.copy() if start_latent is None else np.asarray(start_latent, dtype=float)
    if za.shape != zs.shape:
        raise InvalidInputError("articulation start latent has the wrong shape", "start_latent")
    if c_empty is None:
        c_empty = np.zeros_like(_emb(p_source))
    cache = SourceCache()
    s_lat, s_eps, a_lat, a_eps = [zs], [], [za], []
    steps = 0

    for i, (t, t_next) in enumerate(zip(ts[:-1], ts[1:])):
        def capture(half, i=i):
            def hook(layer, qkv):
                cache.put(i, layer, half, qkv)
                return None
            return hook

        eps_s = guide(predictor, zs, t, p_source, c_empty, guidance_scale,
                      attention_cond=capture("cond"), attention_uncond=capture("uncond"))
        _check_shape(eps_s, zs)
        for layer in range(getattr(predictor, "n_layers", 0)):
            if not cache.has(i, layer, "uncond") and cache.has(i, layer, "cond"):
                # guidance was short-circuited; both halves saw identical inputs
                cache.put(i, layer, "uncond", cache.get(i, layer, "cond"))
        zs = ddim_step(zs, eps_s, t, t_next, schedule)

        def rewire(half, i=i):
            def hook(layer, qkv):
                return rewired_attention(qkv, cache.get(i, layer, half), n_heads)
            return hook

        eps_a = guide(predictor, za, t, p_target, c_negative, guidance_scale,
                      attention_cond=rewire("cond"), attention_uncond=rewire("uncond"))
        _check_shape(eps_a, za)
        za = ddim_step(za, eps_a, t, t_next, schedule)
        s_lat.append(zs)
        s_eps.append(eps_s)
        a_lat.append(za)
        a_eps.append(eps_a)
        steps += 1

    return ArticulationResult(zs, za, DiffusionTrajectory(ts, s_lat, s_eps),
                              DiffusionTrajectory(ts, a_lat, a_eps), steps, depth)


# -- score distillation ------------------------------------------------------

WEIGHTINGS = {
    "constant": lambda alpha_bar: 1.0,
    "one_minus_alpha_bar": lambda alpha_bar: 1.0 - alpha_bar,
}


def _fd_jacobian(render, theta, h):
    theta = np.asarray(theta, dtype=float)
    x0 = np.asarray(render(theta), dtype=float)
    J = np.empty((x0.size, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[j] = h
        J[:, j] = (np.asarray(render(theta + e)).ravel() - np.asarray(render(theta - e)).ravel()) \
            / (2 * h)
    return J


def sds_gradient(theta, render, predictor, cond, t, noise, schedule, weighting="constant",
                 jacobian=None, uncond=None, guidance_scale=1.0, fd_step=1e-6):
    """Single-sample score-distillation gradient with respect to ``theta``.

    ``render(theta)`` produces an image-like array ``x``; ``jacobian(theta)``
    returns ``dx/dtheta`` as an ``(x.size, theta.size)`` matrix and is
    approximated by central differences when omitted. ``weighting`` is a
    name from :data:`WEIGHTINGS` or a callable of ``alpha_bar``.
    """
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(render(theta), dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != x.shape:
        raise InvalidInputError("injected noise must match the rendered shape", "noise")
    a = schedule.alpha_bar(t)
    w = WEIGHTINGS[weighting](a) if isinstance(weighting, str) else float(weighting(a))
    x_t = np.sqrt(a) * x + np.sqrt(1.0 - a) * noise
    if uncond is None:
        eps_hat = predictor.predict(x_t, _emb(cond), t)
    else:
        eps_hat = guide(predictor, x_t, t, cond, uncond, guidance_scale)
    J = jacobian(theta) if jacobian is not None else _fd_jacobian(render, theta, fd_step)
    J = np.asarray(J, dtype=float).reshape(x.size, theta.size)
    if not np.all(np.isfinite(J)):
        raise FloatingPointError("non-finite render Jacobian")
    return (w * (eps_hat - noise).ravel() @ J).reshape(theta.shape)
