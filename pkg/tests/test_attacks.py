import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustprop.attacks import (
    AttackParams, _project_l1, fgsm, pgd, point_rngs, project, property_pgd, sample_ball,
)
from robustprop.data import gen_two_moons
from robustprop.nn import forward
from robustprop.properties import distance, make_property, violation_margin
from robustprop.training import TrainConfig, train_network

from conftest import affine_net, random_net


def test_fgsm_direction_on_linear_net():
    net = affine_net([[1.0], [-1.0]], [0.0, 0.0])
    # label 0: CE decreases in x, so the attack moves by -eps
    np.testing.assert_allclose(fgsm(net, np.array([0.3]), 0, 0.1), [0.2])
    np.testing.assert_allclose(fgsm(net, np.array([0.3]), 1, 0.1), [0.4])


def test_fgsm_domain_clipping():
    net = affine_net([[1.0], [-1.0]], [0.0, 0.0])
    assert fgsm(net, np.array([0.05]), 0, 0.1, domain=(0.0, 1.0))[0] == 0.0


def test_pgd_one_step_equals_fgsm_exactly():
    rng = np.random.default_rng(0)
    for seed in range(10):
        net = random_net([3, 8, 3], seed)
        x = rng.uniform(size=(20, 3))
        y = rng.integers(0, 3, 20)
        eps = float(rng.uniform(0.01, 0.3))
        p = pgd(net, x, y, AttackParams(eps, steps=1, step_size=eps, random_start=False))
        assert p.tobytes() == fgsm(net, x, y, eps).tobytes()


@pytest.mark.parametrize("metric", ["linf", "l1", "l2"])
def test_outputs_stay_in_ball(metric):
    rng = np.random.default_rng(1)
    net = random_net([4, 6, 3], 1)
    x = rng.uniform(size=(30, 4))
    y = rng.integers(0, 3, 30)
    spec = make_property("SR", 0.2, delta=0.01, in_metric=metric)
    adv = property_pgd(spec, net, x, y, AttackParams(0.2, restarts=2), seed=3)
    assert np.all(distance(adv, x, metric) <= 0.2 + 1e-12)
    for i in range(5):
        pts = sample_ball(x[i], 0.2, 200, np.random.default_rng(i), metric)
        assert np.all(distance(pts, x[i], metric) <= 0.2 + 1e-12)
    if metric == "linf":
        a = pgd(net, x, y, AttackParams(0.2))
        assert np.all(np.abs(a - x) <= 0.2 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_l1_projection_matches_bisection_oracle(seed, eps):
    d = np.random.default_rng(seed).normal(size=(1, 6))
    p = _project_l1(d, eps)[0]
    if np.abs(d).sum() <= eps:
        np.testing.assert_array_equal(p, d[0])
        return
    # oracle: soft threshold theta found by bisection on sum(max(|d|-theta, 0)) = eps
    lo, hi = 0.0, np.abs(d).max()
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.maximum(np.abs(d) - mid, 0).sum() > eps:
            lo = mid
        else:
            hi = mid
    oracle = np.sign(d[0]) * np.maximum(np.abs(d[0]) - hi, 0)
    np.testing.assert_allclose(p, oracle, atol=1e-10)
    assert np.abs(p).sum() == pytest.approx(eps, rel=1e-10)


def test_linf_projection_then_domain():
    c = np.array([[0.05, 0.5]])
    out = project(np.array([[-1.0, 2.0]]), c, 0.1, "linf", (0.0, 1.0))
    np.testing.assert_allclose(out, [[0.0, 0.6]])


def test_sample_ball_linf_moments():
    # per-coordinate mean within 0.01 of the center (3 sigma of U(-0.1, 0.1) with n=10000 is ~0.0017)
    c = np.array([0.3, 0.7, 0.5])
    pts = sample_ball(c, 0.1, 10_000, np.random.default_rng(0))
    assert np.all(np.abs(pts.mean(axis=0) - c) < 0.01)
    assert np.all(pts >= c - 0.1) and np.all(pts <= c + 0.1)


def test_sample_ball_l2_radius_distribution():
    # uniform in a 2-D disc: P(r <= eps/2) = 1/4
    pts = sample_ball(np.zeros(2), 1.0, 20_000, np.random.default_rng(2), "l2")
    frac = (np.linalg.norm(pts, axis=1) <= 0.5).mean()
    assert abs(frac - 0.25) < 0.015


def test_sample_ball_l1_radius_distribution():
    # uniform in the 2-D L1 ball: P(|x|_1 <= 1/2) = 1/4
    pts = sample_ball(np.zeros(2), 1.0, 20_000, np.random.default_rng(3), "l1")
    frac = (np.abs(pts).sum(axis=1) <= 0.5).mean()
    assert abs(frac - 0.25) < 0.015


def test_per_point_streams_independent_of_batch_composition():
    net = random_net([2, 6, 2], 0)
    x = np.random.default_rng(0).uniform(size=(10, 2))
    y = np.zeros(10, dtype=int)
    params = AttackParams(0.1)
    full = pgd(net, x, y, params, seed=5)
    part = pgd(net, x[3:7], y[3:7], params, seed=5, indices=np.arange(3, 7))
    np.testing.assert_allclose(full[3:7], part, rtol=0, atol=1e-12)
    again = pgd(net, x, y, params, seed=5)
    assert again.tobytes() == full.tobytes()


def test_point_rngs_tuple_seed():
    a = point_rngs((1, 2), [3])[0].random()
    b = np.random.default_rng([1, 2, 3]).random()
    assert a == b


def test_epsilon_zero_returns_input():
    net = random_net([2, 6, 2], 0)
    x = np.array([[0.2, 0.4]])
    assert pgd(net, x, [0], AttackParams(0.0)).tobytes() == x.tobytes()
    spec = make_property("SR", 0.0, delta=1.0)
    best, m = property_pgd(spec, net, x[0], 0, AttackParams(0.0), return_margin=True)
    np.testing.assert_array_equal(best, x[0])
    assert m == -1.0


def test_property_pgd_finds_grid_violations():
    # 2-4-2 nets where a dense grid shows an SR violation at eps=0.1, delta=0.05.
    # A single restart is a local search, so the check is aggregate: most
    # nets are attacked in >= 4/5 restarts and most restarts succeed overall.
    spec = make_property("SR", 0.1, delta=0.05)
    c = np.array([0.5, 0.5])
    g = np.linspace(-0.1, 0.1, 41)
    grid = c + np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    per_net = []
    for seed in range(100):
        net = random_net([2, 4, 2], seed)
        if violation_margin(spec, net, c, 0, grid).max() <= 0:
            continue
        hits = sum(property_pgd(spec, net, c, 0, AttackParams(0.1), seed=r,
                                return_margin=True)[1] > 0 for r in range(5))
        per_net.append(hits)
    per_net = np.array(per_net)
    assert len(per_net) >= 50
    assert (per_net >= 4).mean() >= 0.75
    assert per_net.sum() / (5 * len(per_net)) >= 0.8
    assert (per_net >= 1).mean() >= 0.95


@pytest.mark.slow
def test_pgd_flips_at_least_as_many_labels_as_fgsm():
    pgd_flips, fgsm_flips = [], []
    for seed in range(5):
        ds = gen_two_moons(200, 0.1, seed)
        net, _ = train_network(ds, TrainConfig(hidden=(16,), lr=3e-2, epochs=60, batch_size=32,
                                               seed=seed))
        X, y = ds.inputs, ds.labels
        a = pgd(net, X, y, AttackParams(0.3), seed=seed)
        f = fgsm(net, X, y, 0.3)
        pgd_flips.append((forward(net, a)[0].argmax(1) != y).sum())
        fgsm_flips.append((forward(net, f)[0].argmax(1) != y).sum())
    assert np.mean(pgd_flips) >= np.mean(fgsm_flips)


def test_attack_params_validation():
    with pytest.raises(ValueError):
        AttackParams(-0.1)
    with pytest.raises(ValueError):
        AttackParams(0.1, steps=0)
    with pytest.raises(ValueError):
        AttackParams(0.1, restarts=0)
    assert AttackParams(0.2).step == pytest.approx(0.02)
