"""Inversion-depth selection by the conditional noise-difference norm.

For each candidate depth the input is inverted, reconstructed with the
time-shifted sampler, and every reconstruction state is scored by how much
the prompt changes the predicted noise. The depth with the largest mean
difference wins; ties go to the shallower depth.
"""

from dataclasses import dataclass, field

import numpy as np

from .ddim import DEFAULT_GUIDANCE, DEFAULT_STEPS, _emb, invert, reconstruct
from .errors import InvalidInputError

OK = "ok"
NO_SIGNAL = "no-signal"
DEFAULT_CANDIDATES = tuple(range(5, 50, 5))


@dataclass
class DepthScore:
    depth: int
    d: float
    step_norms: list = field(default_factory=list)

    def to_dict(self):
        return {"depth": int(self.depth), "d": float(self.d),
                "step_norms": [float(x) for x in self.step_norms]}


@dataclass
class DepthSelection:
    """Outcome of :func:`select_depth`; ``depth`` is None when there was no signal."""

    status: str
    depth: object
    scores: list

    @property
    def ok(self):
        return self.status == OK

    def to_dict(self):
        return {"status": self.status, "depth": self.depth,
                "scores": [s.to_dict() for s in self.scores]}


def noise_diff_norm(predictor, trajectory, e_p, e_null, depth=None):
    """Mean L2 norm of ``eps(z_t, e_p) - eps(z_t, e_null)`` over a trajectory's steps.

    The prediction states are ``latents[:-1]`` at ``timesteps[:-1]``.
    """
    if len(trajectory) == 0:
        raise InvalidInputError("cannot score an empty trajectory", "trajectory")
    ep, en = _emb(e_p), _emb(e_null)
    norms = []
    for z, t in zip(trajectory.latents[:-1], trajectory.timesteps[:-1]):
        a = predictor.predict(z, ep, t)
        b = predictor.predict(z, en, t)
        if np.shape(a) != np.shape(z) or np.shape(b) != np.shape(z):
            raise InvalidInputError("predictor output shape does not match the latent", "predictor")
        norms.append(float(np.linalg.norm(np.ravel(a - b))))
    if depth is None:
        depth = trajectory.timesteps.max()
    return DepthScore(int(round(depth)), float(np.mean(norms)), norms)


def select_depth(predictor, z0, candidates, e_p, e_null, schedule,
                 guidance_scale=DEFAULT_GUIDANCE, n_steps=DEFAULT_STEPS):
    """Score every candidate depth on its reconstruction trajectory and pick the argmax."""
    cands = sorted({int(c) for c in candidates})
    if not cands:
        raise InvalidInputError("no candidate depths given", "candidates")
    if cands[0] < 0 or cands[-1] > schedule.T:
        raise InvalidInputError(f"candidate depths must lie in 0..{schedule.T}", "candidates")
    scores = []
    for depth in cands:
        inv = invert(z0, predictor, e_p, e_null, depth, schedule, guidance_scale)
        rec = reconstruct(inv.final, depth, predictor, e_p, e_null, schedule, guidance_scale,
                          n_steps)
        scores.append(noise_diff_norm(predictor, rec, e_p, e_null, depth))
    ds = np.array([s.d for s in scores])
    if not np.any(ds > 0):
        return DepthSelection(NO_SIGNAL, None, scores)
    # argmax returns the first maximum, i.e. the shallowest tied depth
    return DepthSelection(OK, cands[int(np.argmax(ds))], scores)


def peaked_gain(center=25.0, width=6.0):
    """Conditioning gain ``exp(-((t - center) / width)^2)`` peaking mid-trajectory."""
    return lambda t: float(np.exp(-(((t - center) / width) ** 2)))
