import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, chain, chain_problem, make_problem
from meshpose import align, synthetic
from meshpose.align import (AlignProblem, KeypointObservation, OptimizerConfig, TargetSet,
                            fold_root, keypoint_loss, loss_gradient, mask_loss, optimize_pose,
                            render_keypoints)
from meshpose.errors import InvalidInputError, NonFiniteGradientError, UnusableTargetsError
from meshpose.mvcam import make_ring_rig, project
from meshpose.rig import KeypointBinding, Pose, evaluate_keypoints_3d
from meshpose.rotations import rodrigues


def with_targets(problem, targets):
    return AlignProblem(problem.skeleton, problem.mesh, problem.bindings, problem.rig, targets,
                        problem.shared_pose, problem.per_view_rotation,
                        problem.per_view_translation, problem.root_attenuation)


def rendered_targets(problem):
    return synthetic.render_targets(problem)


# -- types --------------------------------------------------------------------

def test_observation_validation():
    with pytest.raises(InvalidInputError):
        KeypointObservation(0, "a", [1, 2], confidence=1.5)
    with pytest.raises(InvalidInputError):
        KeypointObservation(0, "a", [np.nan, 2], visible=True)
    KeypointObservation(0, "a", [np.nan, 2], visible=False)
    with pytest.raises(InvalidInputError):
        TargetSet((KeypointObservation(0, "a", [1, 2]), KeypointObservation(0, "a", [3, 4])))


def test_problem_validation():
    p = chain_problem(0)
    with pytest.raises(InvalidInputError):
        AlignProblem(p.skeleton, p.mesh, p.bindings, p.rig, p.targets, p.shared_pose,
                     np.zeros((2, 3)))
    with pytest.raises(InvalidInputError):
        AlignProblem(p.skeleton, p.mesh, p.bindings, p.rig, p.targets, p.shared_pose,
                     root_attenuation=1.5)


# -- rendering ----------------------------------------------------------------

def test_identity_render_is_rest_projection():
    p = chain_problem(1)
    p = p.with_parameters(Pose.identity(3), np.random.default_rng(0).normal(size=(3, 3)) * 0,
                          np.zeros((3, 3)))
    kp = evaluate_keypoints_3d(p.skeleton, Pose.identity(3), p.mesh, p.bindings)
    for v, cam in enumerate(p.rig):
        for kid, (uv, vis) in render_keypoints(p, v).items():
            np.testing.assert_allclose(uv, project(cam, kp[kid])[0], atol=1e-9)


def test_zero_attenuation_ignores_per_view_root(rng):
    p = chain_problem(2, s=0.0)
    a = render_keypoints(p, 1)
    b = render_keypoints(p.with_parameters(per_view_rotation=rng.normal(size=(3, 3)) * 3), 1)
    for k in a:
        np.testing.assert_array_equal(a[k][0], b[k][0])


def test_full_attenuation_matches_folded_root():
    p = chain_problem(3, s=1.0)
    for v in range(p.n_views):
        folded = fold_root(p, v)
        kp = evaluate_keypoints_3d(p.skeleton, folded, p.mesh, p.bindings)
        for kid, (uv, _) in render_keypoints(p, v).items():
            np.testing.assert_allclose(uv, project(p.rig[v], kp[kid])[0], atol=1e-8)


def test_effective_root_angle_is_scaled(rng):
    p = chain_problem(4, s=0.3)
    r = p.per_view_rotation[0]
    assert np.linalg.norm(align.effective_root_rotation(p, 0)) == pytest.approx(
        0.3 * np.linalg.norm(r), rel=1e-15)


# -- loss ---------------------------------------------------------------------

def test_loss_zero_at_rendered_targets():
    p = chain_problem(5)
    p = with_targets(p, rendered_targets(p))
    assert keypoint_loss(p) == pytest.approx(0.0, abs=1e-20)
    # rendering and the loss take different FK paths, so residuals are round-off sized
    assert np.abs(loss_gradient(p).flat()).max() < 1e-9


def test_gradient_exactly_zero_when_loss_exactly_zero():
    sk = chain(2)
    b = [KeypointBinding("root_head", bone=0, fraction=0.0)]
    p = AlignProblem(sk, None, b, make_ring_rig(3), TargetSet(()),
                     Pose(np.zeros((2, 3)), [0.1, 0.2, -0.3]))
    p = with_targets(p, rendered_targets(p))
    assert keypoint_loss(p) == 0.0
    assert np.all(loss_gradient(p).flat() == 0)


def test_loss_three_four_five():
    sk = chain(1)
    rig = make_ring_rig(1, radius=5.0)
    b = [KeypointBinding("tip", bone=0, fraction=1.0)]
    p0 = AlignProblem(sk, None, b, rig, TargetSet(()), Pose.identity(1))
    uv = render_keypoints(p0, 0)["tip"][0]
    t = TargetSet((KeypointObservation(0, "tip", uv + [3.0, 4.0]),))
    assert keypoint_loss(with_targets(p0, t)) == pytest.approx(25.0, rel=1e-12)


def test_loss_matches_per_pair_oracle():
    p, _ = make_problem(7, n_views=3)
    total, m = 0.0, 0
    for v in range(p.n_views):
        r = render_keypoints(p, v)
        for o in p.targets:
            if o.view_id == v and o.visible:
                uv, ok = r[o.keypoint_id]
                if ok:
                    total += o.confidence * float(np.sum((uv - o.position) ** 2))
                    m += 1
    assert keypoint_loss(p) == pytest.approx(total / m, rel=1e-9)


def test_unmatched_keypoints_skipped_and_unusable_rejected():
    p = chain_problem(6)
    extra = list(p.targets) + [KeypointObservation(0, "ghost", [1, 1])]
    q = with_targets(p, TargetSet(tuple(extra)))
    assert q.compiled.skipped == ["ghost"]
    assert keypoint_loss(q) == keypoint_loss(p)
    hidden = TargetSet(tuple(KeypointObservation(o.view_id, o.keypoint_id, o.position, False)
                             for o in p.targets))
    with pytest.raises(UnusableTargetsError):
        keypoint_loss(with_targets(p, hidden))


def test_confidence_zero_leaves_weighted_sum_unchanged():
    p = chain_problem(8)
    obs = list(p.targets)
    # move one observation far away and zero its confidence
    o = obs[0]
    obs[0] = KeypointObservation(o.view_id, o.keypoint_id, o.position + 100.0, True, 0.0)
    q = with_targets(p, TargetSet(tuple(obs)))
    np.testing.assert_allclose(keypoint_loss(q), keypoint_loss(with_targets(
        p, TargetSet(tuple([KeypointObservation(o.view_id, o.keypoint_id, o.position, True, 0.0)]
                           + obs[1:])))), rtol=1e-14)
    np.testing.assert_allclose(loss_gradient(q).flat(), loss_gradient(with_targets(
        p, TargetSet(tuple([KeypointObservation(o.view_id, o.keypoint_id, o.position, True, 0.0)]
                           + obs[1:])))).flat(), rtol=1e-12, atol=1e-15)


def test_view_permutation_leaves_loss_unchanged(rng):
    p = chain_problem(9, n_views=4)
    perm = rng.permutation(4)  # new view i is old view perm[i]
    inv = np.argsort(perm)
    cams = make_ring_rig(4, elevation=0.4, radius=6.0, focal=500.0)
    from meshpose.mvcam import Camera, ViewRig
    new_cams = ViewRig(tuple(Camera(i, cams[perm[i]].azimuth, cams[perm[i]].elevation,
                                    cams[perm[i]].radius, cams[perm[i]].focal,
                                    cams[perm[i]].principal, cams[perm[i]].image_size)
                             for i in range(4)))
    targets = TargetSet(tuple(KeypointObservation(int(inv[o.view_id]), o.keypoint_id, o.position,
                                                  o.visible, o.confidence) for o in p.targets))
    q = AlignProblem(p.skeleton, p.mesh, p.bindings, new_cams, targets, p.shared_pose,
                     p.per_view_rotation[perm], p.per_view_translation[perm], p.root_attenuation)
    assert keypoint_loss(q) == pytest.approx(keypoint_loss(p), rel=1e-12)


@given(st.integers(0, 10**6))
@settings(max_examples=25)
def test_loss_nonnegative(seed):
    p = chain_problem(seed)
    assert keypoint_loss(p) >= 0


# -- gradient -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_central_differences(seed):
    p = chain_problem(seed)
    g = loss_gradient(p).flat()
    fd = central_difference(p)
    rel = np.abs(g - fd) / (np.abs(g) + 1e-8)
    assert rel.max() < 1e-4


def test_gradient_on_quadruped_rig():
    p, _ = make_problem(11, n_bones=10, n_views=3)
    g = loss_gradient(p).flat()
    fd = central_difference(p)
    rel = np.abs(g - fd) / (np.abs(g) + 1e-8)
    assert rel.max() < 1e-4


def test_zero_attenuation_zero_root_gradient():
    p = chain_problem(12, s=0.0)
    assert np.all(loss_gradient(p).per_view_rotation == 0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_names_parameter():
    p = chain_problem(13)
    obs = list(p.targets)
    o = obs[0]
    obs[0] = KeypointObservation(o.view_id, o.keypoint_id, [1e308, 1e308])
    with pytest.raises(NonFiniteGradientError) as info:
        loss_gradient(with_targets(p, TargetSet(tuple(obs))))
    assert "[" in info.value.parameter


# -- optimizer ----------------------------------------------------------------

def test_zero_iterations_returns_initial():
    p = chain_problem(14)
    pose, pvr, pvt, rep = optimize_pose(p, OptimizerConfig(max_iterations=0))
    np.testing.assert_allclose(pose.rotations, p.shared_pose.canonical().rotations)
    np.testing.assert_array_equal(pvr, p.per_view_rotation)
    assert rep.iterations == 0 and rep.final_loss == rep.initial_loss


def test_returns_best_and_never_worse():
    p = chain_problem(15)
    _, _, _, rep = optimize_pose(p, OptimizerConfig(max_iterations=100))
    assert rep.final_loss <= rep.initial_loss
    assert rep.final_loss == min(rep.loss_trace)
    assert len(rep.loss_trace) == rep.iterations + 1


def test_deterministic_for_seed():
    p = chain_problem(16)
    cfg = OptimizerConfig(max_iterations=40, init_jitter=0.01, seed=3)
    a = optimize_pose(p, cfg)
    b = optimize_pose(p, cfg)
    np.testing.assert_array_equal(a[0].rotations, b[0].rotations)
    assert a[3].loss_trace == b[3].loss_trace


def test_hinge_recovers_grid_search_angle():
    sk = chain(2)
    rng = np.random.default_rng(0)
    mesh = synthetic.tube_mesh(sk)
    bindings = synthetic.tube_bindings(sk, rng, surface_per_bone=2)
    rig = make_ring_rig(4, elevation=0.3, radius=5.0, focal=600.0)
    truth = Pose.identity(2)
    truth.root_translation = np.array([-1.0, 0.0, 0.0])
    truth.rotations[1] = [0, 0, np.radians(30)]
    p = AlignProblem(sk, mesh, bindings, rig, TargetSet(()), truth, root_attenuation=0.0)
    targets = synthetic.render_targets(p)
    start = Pose(np.zeros((2, 3)), truth.root_translation)
    p = AlignProblem(sk, mesh, bindings, rig, targets, start, root_attenuation=0.0)
    pose, _, _, _ = optimize_pose(p, OptimizerConfig(max_iterations=600, tol=0.0))
    # grid search over the hinge angle with everything else at the truth
    grid = np.radians(np.arange(-180, 180, 0.01))
    best, best_loss = None, np.inf
    for th in grid[np.abs(grid - np.radians(30)) < np.radians(5)]:
        trial = Pose(truth.rotations.copy(), truth.root_translation)
        trial.rotations[1] = [0, 0, th]
        loss = keypoint_loss(p.with_parameters(trial))
        if loss < best_loss:
            best, best_loss = th, loss
    coarse = [keypoint_loss(p.with_parameters(Pose(np.array([[0, 0, 0], [0, 0, th]]),
                                                   truth.root_translation)))
              for th in grid[::500]]
    assert abs(grid[::500][int(np.argmin(coarse))] - best) < np.radians(5.01)
    R = rodrigues(pose.rotations[0]).T @ rodrigues(pose.rotations[0]) @ rodrigues(pose.rotations[1])
    angle = np.arctan2(R[1, 0], R[0, 0])
    assert abs(angle - best) < 1e-3


def test_divergence_raises_with_report():
    # start a hair away from a perfect fit; a huge step blows the loss up
    p = chain_problem(17)
    p = with_targets(p, rendered_targets(p))
    p = p.from_vector(p.parameter_vector() + 1e-4)
    with pytest.raises(align.DivergenceError) as info:
        optimize_pose(p, OptimizerConfig(max_iterations=300, learning_rate=2.0, tol=0.0))
    rep = info.value.report
    assert rep.stop_reason == "diverged" and rep.iterations == 50


def test_exact_start_converges_without_steps():
    p = chain_problem(17)
    p = with_targets(p, rendered_targets(p))
    pose, _, _, rep = optimize_pose(p, OptimizerConfig(learning_rate=2.0, tol=1e-12, window=100))
    assert rep.converged and rep.iterations == 0 and rep.final_loss < 1e-12
    np.testing.assert_allclose(pose.rotations, p.shared_pose.canonical().rotations)


# -- mask term ----------------------------------------------------------------

def test_mask_loss_examples():
    p = chain_problem(18)
    w, h = p.rig[0].image_size
    full = [np.ones((h, w))] * p.n_views
    assert mask_loss(p, full, full) == 0.0
    ii, jj = np.mgrid[:h, :w]
    checker = ((ii + jj) % 2).astype(float)
    assert mask_loss(p, [checker] * p.n_views, [1 - checker] * p.n_views) == 1.0
    with pytest.raises(InvalidInputError):
        mask_loss(p, None, [np.ones((4, 4))] * p.n_views)


def test_zero_mask_weight_matches_keypoint_only():
    p = chain_problem(19)
    w, h = p.rig[0].image_size
    a = optimize_pose(p, OptimizerConfig(max_iterations=30))
    b = optimize_pose(p, OptimizerConfig(max_iterations=30, mask_weight=0.0),
                      target_masks=[np.zeros((h, w))] * p.n_views)
    np.testing.assert_array_equal(a[0].rotations, b[0].rotations)


def test_mask_term_gradient_and_use():
    p = chain_problem(20)
    w, h = p.rig[0].image_size
    ii, jj = np.mgrid[:h, :w]
    blob = np.exp(-((ii - h / 2) ** 2 + (jj - w / 2) ** 2) / (2 * 60.0 ** 2))
    masks = [blob] * p.n_views
    x = p.parameter_vector()

    def total(xx):
        return align._evaluate(p.from_vector(xx), want_grad=False,
                               mask=(0.5, masks, "bilinear")).loss

    g = align._evaluate(p, mask=(0.5, masks, "bilinear")).gradient.flat()
    h_ = 1e-6
    for i in range(0, len(x), 5):
        e = np.zeros_like(x)
        e[i] = h_
        fd = (total(x + e) - total(x - e)) / (2 * h_)
        assert abs(fd - g[i]) <= 1e-4 * (abs(g[i]) + 1e-3)
    _, _, _, rep = optimize_pose(p, OptimizerConfig(max_iterations=20, mask_weight=0.5),
                                 target_masks=masks)
    assert rep.final_loss <= rep.initial_loss
