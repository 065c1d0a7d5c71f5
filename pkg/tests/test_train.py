"""Training machinery: the exact reverse-mode gradient against central
finite differences (the keystone test), the optimizers on classical
problems, parameter layout, initialization, and the multi-start fit."""

import numpy as np
import pytest

from lfrid.bench import Dataset, bfr
from lfrid.errors import AllRestartsFailed
from lfrid.train import (
    ParamLayout,
    Problem,
    TrainConfig,
    adam_run,
    build_model,
    fit,
    init_params,
    lbfgs_run,
    loss,
    loss_and_gradient,
)


def make_dataset(rng, N=50, n_u=1, n_y=1, n_d=0):
    return Dataset(
        name="synth",
        u=rng.normal(size=(N, n_u)),
        y=rng.normal(scale=0.5, size=(N, n_y)),
        d=rng.normal(size=(N, n_d)) if n_d else None,
    )


def central_fd(fun, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


# --------------------------------------------------- gradient correctness

@pytest.mark.parametrize("mode", ["affine", "rational"])
def test_gradient_matches_finite_differences(mode):
    """20 random instances per mode, N = 50, mixed structures; every
    component of the analytic gradient must agree with central differences
    to rtol 1e-4 / atol 1e-7."""
    rng = np.random.default_rng(0 if mode == "affine" else 1)
    for case in range(20):
        eta = tuple(int(e) for e in rng.integers(1, 3, rng.integers(1, 3)))
        hidden = ((), (4,), (4, 3))[case % 3]
        n_d = case % 2
        cfg = TrainConfig(mode=mode, n_x=int(rng.integers(1, 4)), eta=eta,
                          hidden=hidden, reg_rho=1e-4, epsilon=1e-3)
        data = make_dataset(rng, N=50, n_d=n_d)
        problem = Problem(cfg, data)
        theta = 0.3 * rng.normal(size=problem.layout.size)
        value, grad = problem.loss_and_gradient(theta)
        assert np.isfinite(value)
        fd = central_fd(problem.loss, theta)
        assert np.allclose(grad, fd, rtol=1e-4, atol=1e-7), \
            f"case {case}: max err {np.max(np.abs(grad - fd))}"


def test_gradient_with_exogenous_scheduling():
    rng = np.random.default_rng(2)
    cfg = TrainConfig(mode="rational", n_x=2, eta=(2,), reg_rho=0.0)
    data = make_dataset(rng, N=40)
    p_ext = rng.uniform(-0.9, 0.9, size=(40, 1))
    problem = Problem(cfg, data, p_ext=p_ext)
    theta = 0.3 * rng.normal(size=problem.layout.size)
    _, grad = problem.loss_and_gradient(theta)
    fd = central_fd(problem.loss, theta)
    assert np.allclose(grad, fd, rtol=1e-4, atol=1e-7)


def test_module_level_wrappers_agree():
    rng = np.random.default_rng(3)
    cfg = TrainConfig(mode="affine", n_x=2, eta=(1,))
    data = make_dataset(rng, N=30)
    theta = 0.2 * rng.normal(size=ParamLayout(cfg, 1, 1, 0).size)
    v1 = loss(theta, data, cfg)
    v2, g = loss_and_gradient(theta, data, cfg)
    assert v1 == pytest.approx(v2, rel=1e-12)
    assert g.shape == theta.shape


def test_loss_infinite_on_divergence():
    cfg = TrainConfig(mode="affine", n_x=1, eta=(1,), reg_rho=0.0)
    data = Dataset(name="d", u=np.ones((20, 1)), y=np.ones((20, 1)))
    problem = Problem(cfg, data)
    parts = {name: np.zeros(problem.layout.shapes[name])
             for name in problem.layout.slices}
    parts["A_x"] = np.array([[1e6]])  # wildly unstable
    parts["B_u"] = np.array([[1.0]])
    parts["C_y"] = np.array([[1.0]])
    theta = problem.layout.flatten(parts)
    assert problem.loss(theta) == np.inf
    v, g = problem.loss_and_gradient(theta)
    assert v == np.inf and np.all(g == 0.0)


# -------------------------------------------------------- parameter layout

def test_layout_flatten_round_trip():
    cfg = TrainConfig(mode="rational", n_x=3, eta=(2, 1), hidden=(5,))
    layout = ParamLayout(cfg, n_u=2, n_y=1, n_d=1)
    rng = np.random.default_rng(4)
    theta = rng.normal(size=layout.size)
    parts = layout.unflatten(theta)
    assert np.array_equal(layout.flatten(parts), theta)


def test_layout_rational_factor_count():
    for eta in ((1,), (2,), (3,), (1, 1), (2, 2)):
        n_w = sum(eta)
        cfg = TrainConfig(mode="rational", n_x=2, eta=eta)
        layout = ParamLayout(cfg, 1, 1)
        extra = sum(layout.shapes[n][0] for n in
                    ("dA_lower", "dB_upper", "d_d"))
        assert extra == n_w * n_w + n_w
        affine = ParamLayout(TrainConfig(mode="affine", n_x=2, eta=eta), 1, 1)
        assert layout.size - affine.size == n_w * n_w + n_w


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="nonlinear", n_x=2, eta=(1,))
    with pytest.raises(ValueError):
        TrainConfig(mode="affine", n_x=0, eta=(1,))
    with pytest.raises(ValueError):
        TrainConfig(mode="affine", n_x=1, eta=(1,), reg_rho=-1.0)


# ---------------------------------------------------------- initialization

def test_init_params_values():
    cfg = TrainConfig(mode="rational", n_x=3, eta=(2, 1), hidden=(4,))
    layout = ParamLayout(cfg, n_u=2, n_y=1)
    theta = init_params(cfg, n_u=2, n_y=1, rng=0)
    g = lambda n: layout.get(theta, n)
    assert np.array_equal(g("A_x"), 0.5 * np.eye(3))
    assert np.all(g("B_w") == 0.0)
    for name in ("B_u", "C_z", "D_zu", "C_y"):
        v = g(name)
        assert np.all(np.abs(v) <= 0.1) and np.any(v != 0.0)
    assert np.all(g("D_yw") == 0.0) and np.all(g("D_yu") == 0.0)
    assert np.all(g("dA_lower") >= 0.0) and np.all(g("dA_lower") <= 0.1)
    assert np.all(g("d_d") == 0.0)
    assert np.all(g("b") == 0.0) and np.all(g("x0") == 0.0)
    # deterministic per seed
    assert np.array_equal(theta, init_params(cfg, n_u=2, n_y=1, rng=0))
    assert not np.array_equal(theta, init_params(cfg, n_u=2, n_y=1, rng=1))


def test_build_model_round_trips_theta():
    cfg = TrainConfig(mode="rational", n_x=2, eta=(2,), hidden=(3,))
    layout = ParamLayout(cfg, 1, 1)
    theta = init_params(cfg, 1, 1, rng=5)
    model = build_model(cfg, layout, theta)
    assert model.mode == "rational"
    assert model.plant.n_x == 2 and model.plant.n_w == 2
    assert model.factors is not None
    # the feedthrough block is the well-posed construction of the factors
    from lfrid.lfr import build_Dzw
    assert np.array_equal(model.plant.D_zw, build_Dzw(model.factors))


# -------------------------------------------------------------- optimizers

def quadratic(theta):
    H = np.diag([1.0, 10.0, 100.0])
    g = H @ theta
    return 0.5 * float(theta @ g), g


def rosenbrock(theta):
    x, y = theta
    f = (1 - x) ** 2 + 100.0 * (y - x * x) ** 2
    g = np.array([-2 * (1 - x) - 400.0 * x * (y - x * x),
                  200.0 * (y - x * x)])
    return f, g


def test_adam_on_quadratic():
    theta, trace = adam_run(quadratic, np.array([1.0, 1.0, 1.0]), 2000,
                            step_size=0.05)
    assert trace[0] > trace[-1]
    assert np.linalg.norm(theta) < 1e-3


def test_adam_rejects_infinite_steps():
    def fun(theta):
        if np.any(np.abs(theta) > 2.0):
            return np.inf, np.zeros_like(theta)
        return quadratic(theta)
    theta, trace = adam_run(fun, np.array([1.9, 0.0, 0.0]), 500,
                            step_size=0.5)
    assert np.all(np.isfinite(theta)) and np.isfinite(trace[-1])
    assert np.linalg.norm(theta) < 1.0


def test_lbfgs_on_quadratic():
    theta, trace = lbfgs_run(quadratic, np.array([5.0, -3.0, 2.0]), 200)
    assert np.linalg.norm(theta) < 1e-7
    assert trace == sorted(trace, reverse=True)  # monotone decrease


def test_lbfgs_on_rosenbrock_classic_start():
    theta, trace = lbfgs_run(rosenbrock, np.array([-1.2, 1.0]), 500)
    assert np.allclose(theta, [1.0, 1.0], atol=1e-6)
    assert trace[-1] < 1e-12


def test_lbfgs_zero_iterations_returns_start():
    theta0 = np.array([1.0, 2.0, 3.0])
    theta, trace = lbfgs_run(quadratic, theta0, 0)
    assert np.array_equal(theta, theta0)
    assert len(trace) == 1


# ------------------------------------------------------------- fit / BFR

def lti_dataset(N=400, seed=0):
    """Data from a known 1-state LTI plant, noiseless."""
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(N, 1))
    x = 0.0
    y = np.zeros((N, 1))
    for k in range(N):
        y[k, 0] = 1.3 * x + 0.4 * u[k, 0]
        x = 0.7 * x + 0.5 * u[k, 0]
    return Dataset(name="lti", u=u, y=y)


def test_fit_lti_toy_high_bfr():
    train = lti_dataset(seed=0)
    val = lti_dataset(seed=1)
    cfg = TrainConfig(mode="affine", n_x=1, eta=(1,), restarts=1,
                      adam_epochs=300, lbfgs_epochs=300, reg_rho=0.0, seed=0)
    res = fit(cfg, train, val)
    assert res.bfr_val > 99.0
    yh = res.model.simulate(val.u).y
    assert bfr(val.y, yh) == pytest.approx(res.bfr_val, abs=1e-6)


def test_fit_deterministic_and_concurrency_independent():
    train = lti_dataset(seed=2, N=150)
    val = lti_dataset(seed=3, N=150)
    cfg = dict(mode="affine", n_x=1, eta=(1,), restarts=2,
               adam_epochs=50, lbfgs_epochs=50, seed=7)
    r1 = fit(TrainConfig(**cfg), train, val)
    r2 = fit(TrainConfig(**cfg), train, val)
    r3 = fit(TrainConfig(**cfg, n_jobs=2), train, val)
    assert np.array_equal(r1.theta, r2.theta)
    assert np.array_equal(r1.theta, r3.theta)
    assert r1.best_index == r3.best_index


def test_fit_records_all_restarts():
    train = lti_dataset(seed=4, N=100)
    val = lti_dataset(seed=5, N=100)
    cfg = TrainConfig(mode="affine", n_x=1, eta=(1,), restarts=3,
                      adam_epochs=20, lbfgs_epochs=20, seed=0)
    res = fit(cfg, train, val)
    assert len(res.restarts) == 3
    assert res.bfr_val == max(r.bfr_val for r in res.restarts if not r.failed)
    assert res.wall_seconds > 0.0


def test_fit_normalize_data_stores_scalers():
    train = lti_dataset(seed=6, N=100)
    val = lti_dataset(seed=7, N=100)
    cfg = TrainConfig(mode="affine", n_x=1, eta=(1,), restarts=1,
                      adam_epochs=50, lbfgs_epochs=100, seed=0,
                      normalize_data=True)
    res = fit(cfg, train, val)
    assert res.model.scalers is not None
    # model.simulate works in original units despite internal scaling
    yh = res.model.simulate(val.u).y
    assert bfr(val.y, yh) > 95.0
