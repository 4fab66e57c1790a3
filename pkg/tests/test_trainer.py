import json
import math

import numpy as np
import pytest

from splatfill.camera import Camera
from splatfill.cutplane import radial_fan
from splatfill.losses import recon_loss
from splatfill.model import OpaqueAtomConfig, apply_opaque_atom, make_model
from splatfill.providers import ProviderError
from splatfill.render import MASK_ALL, render
from splatfill.smooth import SmoothConfig
from splatfill.trainer import TrainConfig, TrainError, color_gradients, train

from conftest import random_quats
from dataclasses import replace

# fat atoms keep tiny fixtures visible at low resolution
ATOM = OpaqueAtomConfig(atom_cap_fraction=0.05)


def small_scene(seed=0, n=20, w=16, h=16):
    rng = np.random.default_rng(seed)
    m = make_model(rng.uniform(-1, 1, (n, 3)), rng.uniform(0.1, 0.4, (n, 3)),
                   rotations=random_quats(rng, n), colors=rng.random((n, 3)),
                   opacities=rng.uniform(0.2, 1.0, n))
    cam = Camera(position=np.array([0.0, 0, -4.0]), look_at=np.zeros(3),
                 up=np.array([0.0, 1, 0]), vertical_fov=math.radians(45.0),
                 width=w, height=h, near=0.1, far=20.0)
    return m, cam


def ball_fixture(seed=1, n_shell=200, n_core=300):
    rng = np.random.default_rng(seed)
    shell = rng.normal(size=(n_shell, 3))
    shell /= np.linalg.norm(shell, axis=1, keepdims=True)
    core = rng.uniform(-0.55, 0.55, (n_core, 3))
    pos = np.vstack([shell, core])
    n = len(pos)
    m = make_model(pos, np.full(n, 0.2), colors=rng.random((n, 3)))
    trained = np.zeros(n, dtype=bool)
    trained[:n_shell] = True
    return apply_opaque_atom(m.with_trained(trained), ATOM)


def quick_cfg(**kw):
    args = dict(iterations_max=3, render_width=32, render_height=32,
                surface_views_per_iter=2, smooth_interval=1000,
                convergence_epsilon=1e-9, rng_seed=5, atom_cfg=ATOM,
                smooth_cfg=SmoothConfig(grid_resolution=8, max_voxel_fraction=1.0))
    args.update(kw)
    return TrainConfig(**args)


class ConstantProvider:
    """Fixed reference image per view, identical for init and refine."""

    def __init__(self, h, w):
        img = np.zeros((h, w, 3))
        img[:] = np.linspace(0.1, 0.9, w)[None, :, None]
        self.image = img

    def provide(self, request):
        return self.image.copy()


class EchoProvider:
    def provide(self, request):
        return request.rgb.copy()


class FailingRefineProvider(EchoProvider):
    def provide(self, request):
        if request.kind == "refine":
            raise ProviderError("backend went away")
        return request.rgb.copy()


class NanProvider:
    def provide(self, request):
        return np.full_like(request.rgb, np.nan)


def test_config_validation():
    with pytest.raises(TrainError):
        TrainConfig(alpha=1.5)
    with pytest.raises(TrainError):
        TrainConfig(smooth_interval=0)
    with pytest.raises(TrainError):
        TrainConfig(optimizer="adamw")


def test_zero_weight_particle_gets_zero_gradient():
    m, cam = small_scene()
    # particle 0 moved far behind the camera: culled entirely
    pos = m.positions.copy()
    pos[0] = [0, 0, -100.0]
    m = replace(m, positions=pos)
    out = render(m, cam, MASK_ALL, (0, 0, 0), want_contrib=True)
    ref = np.random.default_rng(3).random(out.rgb.shape)
    g = color_gradients(m, out, ref, 0.8)
    assert np.all(g[0] == 0.0)


def test_single_opaque_particle_mse_gradient():
    m = make_model(np.zeros((1, 3)), np.full(1, 0.5), colors=np.array([[0.7, 0.2, 0.4]]))
    _, cam = small_scene()
    out = render(m, cam, MASK_ALL, (0, 0, 0), want_contrib=True)
    assert out.alpha.max() > 0.9
    ref = np.full_like(out.rgb, 0.25)
    g = color_gradients(m, out, ref, 1.0)
    # for a single splat the per-pixel blend weight is exactly the alpha map
    want = (2.0 / out.rgb.size) * (out.alpha[..., None] * (out.rgb - ref)).sum(axis=(0, 1))
    assert np.allclose(g[0], want, atol=1e-9)


def test_gradients_match_finite_differences():
    m, cam = small_scene(seed=4)
    out = render(m, cam, MASK_ALL, (0, 0, 0), want_contrib=True)
    ref = np.random.default_rng(9).random(out.rgb.shape)
    alpha = 0.8
    got = color_gradients(m, out, ref, alpha)

    h = 1e-4
    num = np.zeros_like(got)
    colors = m.colors.copy()
    for i in range(len(m)):
        for c in range(3):
            for sgn, dst in ((1, 0), (-1, 1)):
                colors[i, c] = m.colors[i, c] + sgn * h
                r = render(replace(m, colors=colors), cam, MASK_ALL, (0, 0, 0))
                if dst == 0:
                    fp = recon_loss(r.rgb, ref, alpha)
                else:
                    fm = recon_loss(r.rgb, ref, alpha)
            colors[i, c] = m.colors[i, c]
            num[i, c] = (fp - fm) / (2 * h)
    big = np.abs(num) > 1e-6
    assert big.any()
    assert (np.abs(got - num)[big] / np.abs(num)[big]).max() < 1e-4
    if (~big).any():
        assert np.abs(got - num)[~big].max() < 1e-6


def test_gradients_require_contrib():
    m, cam = small_scene()
    out = render(m, cam, MASK_ALL, (0, 0, 0))
    with pytest.raises(TrainError):
        color_gradients(m, out, np.zeros((16, 16, 3)), 0.8)


def test_zero_iterations_is_identity():
    m = ball_fixture()
    sched = radial_fan(m, 2)
    out = train(m, sched, EchoProvider(), quick_cfg(iterations_max=0))
    assert np.array_equal(out.colors, m.colors)
    assert np.array_equal(out.trained, m.trained)
    assert np.array_equal(out.positions, m.positions)


def test_geometry_frozen_and_flags_monotone():
    m = ball_fixture()
    sched = radial_fan(m, 2)
    out = train(m, sched, ConstantProvider(32, 32), quick_cfg())
    assert np.array_equal(out.positions, m.positions)
    assert np.array_equal(out.scales, m.scales)
    assert np.array_equal(out.rotations, m.rotations)
    assert np.array_equal(out.opacities, m.opacities)
    assert np.all(out.trained[m.trained])  # never reset true -> false
    assert out.trained.sum() > m.trained.sum()  # slice-visible fill got marked
    assert not np.array_equal(out.colors, m.colors)


def test_loss_non_increasing_with_fixed_reference_sgd(tmp_path):
    m = ball_fixture()
    sched = radial_fan(m, 2)
    log = tmp_path / "log.ndjson"
    cfg = quick_cfg(iterations_max=6, optimizer="sgd", learning_rate=1e-3,
                    anchor_weight=0.0, min_visibility=0.0, surface_views_per_iter=0)
    train(m, sched, ConstantProvider(32, 32), cfg, log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(rows) == 6
    for vid in rows[0]["per_view_loss"]:
        seq = [r["per_view_loss"][vid] for r in rows]
        assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))


def test_deterministic_across_runs():
    m = ball_fixture()
    sched = radial_fan(m, 2)
    a = train(m, sched, ConstantProvider(32, 32), quick_cfg())
    b = train(m, sched, ConstantProvider(32, 32), quick_cfg())
    assert np.array_equal(a.colors, b.colors)
    assert np.array_equal(a.trained, b.trained)


def test_echo_provider_converges_immediately(tmp_path):
    m = ball_fixture()
    sched = radial_fan(m, 2)
    log = tmp_path / "log.ndjson"
    train(m, sched, EchoProvider(), quick_cfg(convergence_epsilon=1e-6), log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert len(rows) == 1  # initial reference equals the render, loss 0
    assert max(rows[0]["per_view_loss"].values()) < 1e-6


def test_log_schema_and_smooth_flag(tmp_path):
    m = ball_fixture()
    sched = radial_fan(m, 2)
    log = tmp_path / "log.ndjson"
    train(m, sched, ConstantProvider(32, 32), quick_cfg(iterations_max=4, smooth_interval=2),
          log_path=log)
    rows = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["iteration"] for r in rows] == [1, 2, 3, 4]
    for r in rows:
        assert set(r) == {"iteration", "per_view_loss", "mean_loss", "smoothed", "wall_ms"}
        assert r["mean_loss"] == pytest.approx(np.mean(list(r["per_view_loss"].values())))
        assert r["smoothed"] == (r["iteration"] % 2 == 0)
        assert r["wall_ms"] >= 0


def test_checkpoints_written_every_25_iterations(tmp_path):
    from splatfill import ply_io
    m = ball_fixture(n_shell=80, n_core=80)
    sched = radial_fan(m, 2)
    train(m, sched, ConstantProvider(32, 32), quick_cfg(iterations_max=25),
          checkpoint_dir=tmp_path)
    ply = tmp_path / "checkpoint_00025.ply"
    meta = tmp_path / "checkpoint_00025.meta.json"
    assert ply.exists() and meta.exists()
    back = ply_io.import_ply(ply.read_bytes())
    assert len(back) == len(m)


def test_provider_failure_checkpoints_and_reraises(tmp_path):
    m = ball_fixture(n_shell=80, n_core=80)
    sched = radial_fan(m, 2)
    with pytest.raises(ProviderError):
        train(m, sched, FailingRefineProvider(), quick_cfg(), checkpoint_dir=tmp_path)
    assert (tmp_path / "checkpoint_00001.ply").exists()


def test_nan_reference_raises_naming_iteration():
    m = ball_fixture(n_shell=80, n_core=80)
    sched = radial_fan(m, 2)
    with pytest.raises(TrainError, match="iteration 1"):
        train(m, sched, NanProvider(), quick_cfg())
