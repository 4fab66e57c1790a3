import numpy as np
import pytest

from conftest import random_quats
from splatfill.model import (ModelError, OpaqueAtomConfig, SplatModel,
                             apply_opaque_atom, covariances, make_model,
                             quat_to_rotmat)

import oracles


def test_make_model_defaults():
    m = make_model(np.zeros((3, 3)), np.full(3, 0.1))
    assert len(m) == 3
    assert np.array_equal(m.rotations, np.tile([1.0, 0, 0, 0], (3, 1)))
    assert np.all(m.colors == 0.5)
    assert np.all(m.opacities == 1.0)
    assert m.trained.all()


@pytest.mark.parametrize("field,value", [
    ("scales", np.array([[0.1, -0.1, 0.1]])),
    ("colors", np.array([[1.5, 0.0, 0.0]])),
    ("opacities", np.array([1.5])),
])
def test_invariant_violations_raise(field, value):
    kwargs = dict(positions=np.zeros((1, 3)), scales=np.full((1, 3), 0.1),
                  rotations=np.array([[1.0, 0, 0, 0]]), colors=np.full((1, 3), 0.5),
                  opacities=np.ones(1), trained=np.ones(1, bool))
    kwargs[field] = value
    with pytest.raises(ModelError):
        SplatModel(**kwargs)


def test_non_unit_quaternion_rejected():
    with pytest.raises(ModelError):
        make_model(np.zeros((1, 3)), np.full(1, 0.1), rotations=np.array([[2.0, 0, 0, 0]]))


def test_length_mismatch_names_field():
    with pytest.raises(ModelError, match="colors"):
        SplatModel(positions=np.zeros((2, 3)), scales=np.full((2, 3), 0.1),
                   rotations=np.tile([1.0, 0, 0, 0], (2, 1)), colors=np.full((1, 3), 0.5),
                   opacities=np.ones(2), trained=np.ones(2, bool))


def test_bbox_encloses_positions():
    rng = np.random.default_rng(3)
    m = make_model(rng.normal(size=(50, 3)), np.full(50, 0.1))
    lo, hi = m.bbox
    assert np.all(m.positions >= lo) and np.all(m.positions <= hi)
    assert m.extent == pytest.approx(float(np.max(hi - lo)))


def test_covariances_match_quaternion_oracle():
    rng = np.random.default_rng(7)
    n = 40
    m = make_model(rng.normal(size=(n, 3)), rng.uniform(0.01, 0.5, size=(n, 3)),
                   rotations=random_quats(rng, n))
    got = covariances(m)
    for i in range(n):
        want = oracles.covariance(m.scales[i], m.rotations[i])
        assert np.allclose(got[i], want, atol=1e-12)


def test_quat_to_rotmat_is_rotation():
    rng = np.random.default_rng(11)
    r = quat_to_rotmat(random_quats(rng, 20))
    assert np.allclose(r @ np.swapaxes(r, 1, 2), np.eye(3), atol=1e-12)
    assert np.allclose(np.linalg.det(r), 1.0, atol=1e-12)


def test_opaque_atom_worked_example():
    # extent 3.0, cap 1/3000 -> atomic cap 0.001
    m = make_model(np.array([[0.0, 0, 0], [3.0, 0, 0]]),
                   np.array([[0.01, 0.0001, 0.002], [0.01, 0.01, 0.01]]),
                   opacities=np.array([0.3, 0.9]))
    out = apply_opaque_atom(m, OpaqueAtomConfig())
    assert np.allclose(out.scales[0], [0.001, 0.0001, 0.001])
    assert np.all(out.opacities == 1.0)


def test_opaque_atom_idempotent_and_exact_cap():
    rng = np.random.default_rng(5)
    m = make_model(rng.normal(size=(100, 3)) * 2.0, rng.uniform(1e-5, 0.1, size=(100, 3)),
                   opacities=rng.uniform(0, 1, size=100))
    cfg = OpaqueAtomConfig()
    once = apply_opaque_atom(m, cfg)
    twice = apply_opaque_atom(once, cfg)
    assert np.array_equal(once.scales, twice.scales)
    assert np.array_equal(once.opacities, twice.opacities)
    assert float(once.scales.max()) <= cfg.atom_cap_fraction * once.extent


def test_opaque_atom_preserves_everything_else():
    rng = np.random.default_rng(9)
    m = make_model(rng.normal(size=(20, 3)), rng.uniform(0.001, 0.1, size=(20, 3)),
                   rotations=random_quats(rng, 20), colors=rng.uniform(0, 1, (20, 3)),
                   trained=rng.random(20) < 0.5)
    out = apply_opaque_atom(m)
    assert np.array_equal(out.positions, m.positions)
    assert np.array_equal(out.rotations, m.rotations)
    assert np.array_equal(out.colors, m.colors)
    assert np.array_equal(out.trained, m.trained)


def test_opaque_atom_opacity_opt_out():
    m = make_model(np.zeros((2, 3)), np.full(2, 1e-9), opacities=np.array([0.3, 0.7]))
    out = apply_opaque_atom(m, OpaqueAtomConfig(enforce_opacity=False))
    assert np.allclose(out.opacities, [0.3, 0.7])


def test_opaque_atom_config_validation():
    with pytest.raises(ModelError):
        OpaqueAtomConfig(atom_cap_fraction=0.0)
    with pytest.raises(ModelError):
        OpaqueAtomConfig(atom_cap_fraction=1.5)
