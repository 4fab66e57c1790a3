import logging

import numpy as np
import pytest

import oracles
from splatfill.model import make_model
from splatfill.smooth import SmoothConfig, SmoothError, SmoothReport, smooth, untrained_report


def model_of(positions, colors, trained, **kw):
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    m = make_model(positions, np.full(n, 0.01),
                   colors=np.asarray(colors, dtype=float), **kw)
    return m.with_trained(np.asarray(trained, dtype=bool))


def test_equidistant_pair_averages_evenly():
    # corners pin the bbox; the trio shares one cell of a 4^3 grid
    m = model_of(
        [[0, 0, 0], [1, 1, 1], [0.55, 0.6, 0.6], [0.70, 0.6, 0.6], [0.625, 0.6, 0.6]],
        [[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 1], [0.9, 0.9, 0.9]],
        [True, True, True, True, False])
    out, report = smooth(m, SmoothConfig(grid_resolution=4))
    assert np.allclose(out.colors[4], [0.5, 0, 0.5], atol=1e-12)
    assert report == SmoothReport(4, 1, 0, report.max_voxel_occupancy)


def test_one_and_two_distance_weights():
    # weights 1 and 0.5 -> (2/3, 0, 1/3)
    m = model_of(
        [[-50, -50, -50], [50, 50, -50], [0, 10, 10], [3, 10, 10], [1, 10, 10]],
        [[0, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 1], [0.5, 0.5, 0.5]],
        [True, True, True, True, False])
    out, _ = smooth(m, SmoothConfig(grid_resolution=2))
    assert np.allclose(out.colors[4], [2 / 3, 0, 1 / 3], atol=1e-12)


def random_model(seed, n=300):
    rng = np.random.default_rng(seed)
    m = make_model(rng.uniform(-1, 1, (n, 3)), rng.uniform(0.01, 0.05, n),
                   colors=rng.random((n, 3)))
    return m.with_trained(rng.random(n) < 0.5)


@pytest.mark.parametrize("fallback", [False, True])
def test_matches_all_pairs_oracle(fallback):
    for seed in (1, 2, 3):
        m = random_model(seed)
        cfg = SmoothConfig(grid_resolution=6, neighbor_fallback=fallback,
                           max_voxel_fraction=1.0)
        out, report = smooth(m, cfg)
        want, isolated = oracles.idw_smooth_brute_force(m, 6, neighbor_fallback=fallback)
        assert np.abs(out.colors - want).max() < 1e-9
        assert report.untrained_isolated == isolated


def test_idempotent():
    m = random_model(7)
    cfg = SmoothConfig(grid_resolution=6, max_voxel_fraction=1.0)
    once, _ = smooth(m, cfg)
    twice, _ = smooth(once, cfg)
    assert np.abs(twice.colors - once.colors).max() < 1e-12


def test_trained_particles_and_geometry_untouched():
    m = random_model(9)
    out, _ = smooth(m, SmoothConfig(grid_resolution=6, max_voxel_fraction=1.0))
    assert np.array_equal(out.colors[m.trained], m.colors[m.trained])
    assert np.array_equal(out.positions, m.positions)
    assert np.array_equal(out.scales, m.scales)
    assert np.array_equal(out.opacities, m.opacities)
    assert np.array_equal(out.trained, m.trained)


def test_colors_within_trained_hull_per_voxel():
    m = random_model(11)
    res = 6
    out, _ = smooth(m, SmoothConfig(grid_resolution=res, max_voxel_fraction=1.0))
    lo, hi = m.bbox
    ijk = np.clip(np.floor((m.positions - lo) / (hi - lo) * res).astype(int), 0, res - 1)
    for i in np.flatnonzero(~m.trained):
        same = (ijk == ijk[i]).all(axis=1) & m.trained
        if same.any() and not np.array_equal(out.colors[i], m.colors[i]):
            assert np.all(out.colors[i] >= m.colors[same].min(axis=0) - 1e-12)
            assert np.all(out.colors[i] <= m.colors[same].max(axis=0) + 1e-12)


def test_isolated_particles_left_unchanged():
    # untrained particle far from every trained one, fallback off
    m = model_of(
        [[0, 0, 0], [0.1, 0.1, 0.1], [10, 10, 10]],
        [[1, 0, 0], [0, 1, 0], [0.5, 0.5, 0.5]],
        [True, True, False])
    out, report = smooth(m, SmoothConfig(grid_resolution=8))
    assert np.array_equal(out.colors[2], [0.5, 0.5, 0.5])
    assert report.untrained_isolated == 1


def test_neighbor_fallback_rescues_adjacent_voxel():
    # trained source sits one voxel over; only the fallback finds it
    m = model_of(
        [[0, 0, 0], [4, 4, 4], [2.2, 2.5, 2.5], [1.8, 2.5, 2.5]],
        [[0, 0, 0], [0, 0, 0], [0.2, 0.4, 0.6], [0.9, 0.9, 0.9]],
        [True, True, True, False])
    cfg_off = SmoothConfig(grid_resolution=4)
    cfg_on = SmoothConfig(grid_resolution=4, neighbor_fallback=True)
    out_off, rep_off = smooth(m, cfg_off)
    out_on, rep_on = smooth(m, cfg_on)
    assert rep_off.untrained_isolated == 1
    assert np.array_equal(out_off.colors[3], m.colors[3])
    assert rep_on.untrained_isolated == 0
    assert np.allclose(out_on.colors[3], [0.2, 0.4, 0.6], atol=1e-12)


def test_occupancy_warning(caplog):
    m = random_model(13)
    with caplog.at_level(logging.WARNING, logger="splatfill.smooth"):
        smooth(m, SmoothConfig(grid_resolution=2, max_voxel_fraction=0.001))
    assert any("occupancy" in r.message for r in caplog.records)


def test_config_validation():
    with pytest.raises(SmoothError):
        SmoothConfig(grid_resolution=1)


def test_untrained_report_counts():
    m = random_model(15)
    rep = untrained_report(m, SmoothConfig(grid_resolution=6))
    assert rep["trained"] == int(m.trained.sum())
    assert rep["untrained"] == int((~m.trained).sum())
    _, srep = smooth(m, SmoothConfig(grid_resolution=6, max_voxel_fraction=1.0))
    assert rep["untrained_isolated"] == srep.untrained_isolated

    all_trained = m.with_trained(np.ones(len(m), dtype=bool))
    rep2 = untrained_report(all_trained)
    assert rep2 == {"trained": len(m), "untrained": 0, "untrained_isolated": 0}


def test_smoothing_does_not_mark_trained():
    m = random_model(17)
    out, _ = smooth(m, SmoothConfig(grid_resolution=6, max_voxel_fraction=1.0))
    before = untrained_report(m, SmoothConfig(grid_resolution=6))
    after = untrained_report(out, SmoothConfig(grid_resolution=6))
    assert before["untrained"] == after["untrained"]
