import numpy as np
import pytest

from robustprop.nn import CLAMP, IDENTITY, RELU, Layer, Network, init_network


def random_net(sizes, seed, clamp=(-100.0, 100.0), bias_scale=0.5):
    """Glorot weights with non-zero random biases (zero biases make many kinks coincide)."""
    rng = np.random.default_rng(seed)
    net = init_network(sizes, rng, output_clamp=clamp)
    for layer in net.layers:
        layer.bias[:] = rng.uniform(-bias_scale, bias_scale, size=layer.bias.shape)
    return net


def affine_net(W, b, activation=IDENTITY, lo=None, hi=None):
    return Network([Layer(np.asarray(W, float), np.asarray(b, float), activation, lo, hi)])


def central_diff(f, params, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of every array in ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            a = f()
            p[i] = old - h
            b = f()
            p[i] = old
            g[i] = (a - b) / (2 * h)
        out.append(g)
    return out


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.fixture
def net_2_4_2():
    return random_net([2, 4, 2], 7)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
