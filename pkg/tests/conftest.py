import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meshpose import align, mvcam, synthetic
from meshpose.rig import Bone, Pose, Skeleton

settings.register_profile("ci", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


def chain(n, length=1.0):
    """Straight chain of ``n`` bones along +x starting at the origin."""
    return Skeleton([Bone(i, None if i == 0 else i - 1, [i * length, 0, 0],
                          [(i + 1) * length, 0, 0], f"b{i}") for i in range(n)])


def make_problem(seed, n_bones=8, n_views=4, surface=2, randomize=True):
    """Random quadruped alignment problem with targets rendered from a random pose.

    The returned problem sits at a second random pose so the loss is nonzero.
    """
    rng = np.random.default_rng(seed)
    rig = synthetic.quadruped_rig(rng, n_bones, surface_per_bone=surface)
    cams = mvcam.make_ring_rig(n_views, elevation=0.3, radius=5.0, focal=640.0)
    gt = synthetic.random_pose(rng, rig.skeleton)
    p = align.AlignProblem(rig.skeleton, rig.mesh, rig.bindings, cams, align.TargetSet(()), gt)
    targets = synthetic.render_targets(p, rng)
    start = synthetic.random_pose(rng, rig.skeleton) if randomize else Pose.identity(n_bones)
    pvr = 0.3 * rng.standard_normal((n_views, 3)) if randomize else None
    pvt = 0.05 * rng.standard_normal((n_views, 3)) if randomize else None
    return align.AlignProblem(rig.skeleton, rig.mesh, rig.bindings, cams, targets, start,
                              pvr, pvt), gt


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def chain_problem(seed, n_bones=3, n_views=3, s=0.3):
    """Tube-meshed chain with surface keypoints, a random start and random targets."""
    rng = np.random.default_rng(seed)
    sk = chain(n_bones)
    mesh = synthetic.tube_mesh(sk)
    bindings = synthetic.tube_bindings(sk, rng, surface_per_bone=3)
    cams = mvcam.make_ring_rig(n_views, elevation=0.4, radius=6.0, focal=500.0)
    shift = -np.array([n_bones / 2.0, 0.0, 0.0])
    gt = Pose(0.4 * rng.standard_normal((n_bones, 3)), shift)
    p = align.AlignProblem(sk, mesh, bindings, cams, align.TargetSet(()), gt, root_attenuation=s)
    targets = synthetic.render_targets(p, rng, noise_px=3.0)
    return align.AlignProblem(sk, mesh, bindings, cams, targets,
                              Pose(0.4 * rng.standard_normal((n_bones, 3)),
                                   shift + 0.1 * rng.standard_normal(3)),
                              0.5 * rng.standard_normal((n_views, 3)),
                              0.05 * rng.standard_normal((n_views, 3)), root_attenuation=s)


def central_difference(problem, h=1e-5):
    x = problem.parameter_vector()
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (align.keypoint_loss(problem.from_vector(x + e))
                - align.keypoint_loss(problem.from_vector(x - e))) / (2 * h)
    return g
