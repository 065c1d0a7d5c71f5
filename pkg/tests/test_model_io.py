"""Model document round-trip: every real must survive write/read exactly."""

import json

import numpy as np
import pytest

from lfrid.bench import Scalers
from lfrid.errors import SchemaError
from lfrid.model import LfrModel, from_document, read_model, to_document, \
    write_model
from lfrid.train import ParamLayout, TrainConfig, build_model, init_params


def make_model(mode="rational", hidden=(4,), n_d=0, seed=0, scalers=False):
    cfg = TrainConfig(mode=mode, n_x=2, eta=(2, 1), hidden=hidden)
    layout = ParamLayout(cfg, n_u=1, n_y=1, n_d=n_d)
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=layout.size)  # arbitrary irrational-ish reals
    sc = None
    if scalers:
        sc = Scalers(u_mean=rng.normal(size=1), u_std=np.abs(rng.normal(size=1)) + 0.1,
                     y_mean=rng.normal(size=1), y_std=np.abs(rng.normal(size=1)) + 0.1)
    return build_model(cfg, layout, theta, scalers=sc)


def assert_models_identical(a: LfrModel, b: LfrModel):
    assert a.mode == b.mode
    assert a.plant.delta.eta == b.plant.delta.eta
    for name in ("A_x", "B_w", "B_u", "C_z", "D_zw", "D_zu",
                 "C_y", "D_yw", "D_yu"):
        assert np.array_equal(getattr(a.plant, name), getattr(b.plant, name))
    assert np.array_equal(a.x0, b.x0)
    for (na, Wa), (nb, Wb) in zip(a.net.param_arrays(), b.net.param_arrays()):
        assert na == nb and np.array_equal(Wa, Wb)
    if a.factors is None:
        assert b.factors is None
    else:
        assert np.array_equal(a.factors.dA_lower, b.factors.dA_lower)
        assert np.array_equal(a.factors.dB_upper, b.factors.dB_upper)
        assert np.array_equal(a.factors.d_d, b.factors.d_d)
        assert a.factors.epsilon == b.factors.epsilon
    if a.scalers is None:
        assert b.scalers is None
    else:
        for f in ("u_mean", "u_std", "y_mean", "y_std"):
            assert np.array_equal(getattr(a.scalers, f), getattr(b.scalers, f))


@pytest.mark.parametrize("mode,hidden,n_d,scalers", [
    ("rational", (4,), 0, False),
    ("rational", (), 1, True),
    ("affine", (3, 2), 0, False),
    ("affine", (), 0, True),
])
def test_round_trip_bit_identical(tmp_path, mode, hidden, n_d, scalers):
    model = make_model(mode=mode, hidden=hidden, n_d=n_d, scalers=scalers)
    path = tmp_path / "m.json"
    write_model(model, path)
    assert_models_identical(model, read_model(path))


def test_document_is_json_with_format_tag(tmp_path):
    model = make_model()
    path = tmp_path / "m.json"
    write_model(model, path)
    with open(path) as fh:
        doc = json.load(fh)
    assert doc["format"] == "lfrid-model"
    assert doc["mode"] == "rational"
    assert doc["dims"]["n_w"] == 3


def test_from_document_rejects_foreign_payload():
    with pytest.raises(SchemaError):
        from_document({"format": "something-else"})


def test_round_trip_preserves_simulation(tmp_path):
    model = make_model(seed=3)
    path = tmp_path / "m.json"
    write_model(model, path)
    back = read_model(path)
    rng = np.random.default_rng(0)
    u = 0.1 * rng.normal(size=(50, 1))
    assert np.array_equal(model.simulate(u).y, back.simulate(u).y)


def test_document_round_trip_without_files():
    model = make_model(mode="affine", hidden=(), scalers=True)
    assert_models_identical(model, from_document(to_document(model)))
