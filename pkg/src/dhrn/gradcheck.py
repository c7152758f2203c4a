"""Central finite-difference checks of every backward pass.

Used by the ``gradcheck`` command and the test-suite. Layer functions are
looked up on the :mod:`dhrn.nn` module at call time so a patched layer is
what gets checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from . import nn

H = 1e-5
TOL = 1e-4


def rel_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def numeric_grad(f, x, h=H, idx=None):
    """d f / d x by central differences, at all entries or at the given flat indices."""
    flat = x.reshape(-1)
    positions = range(flat.size) if idx is None else idx
    out = np.zeros(flat.size if idx is None else len(idx))
    for j, i in enumerate(positions):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * h)
    return out.reshape(x.shape) if idx is None else out


@dataclass
class CheckResult:
    op: str
    seed: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOL


def _away_from_zero(rng, shape, margin=1e-2):
    # keep ReLU inputs clear of the kink so a +-h step never crosses it
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.copysign(margin, x), x)


def check_conv1d(seed):
    rng = np.random.default_rng(seed)
    N, C, K = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    k, s = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    pl, pr = int(rng.integers(0, 3)), int(rng.integers(0, 3))
    L = int(rng.integers(max(1, k - pl - pr), 14))
    x = rng.standard_normal((N, C, L))
    p = nn.Conv1dParams(rng.standard_normal((K, C, k)), rng.standard_normal(K), s, pl, pr)
    y, cache = nn.conv1d_forward(x, p)
    g = rng.standard_normal(y.shape)
    gx, gw, gb = nn.conv1d_backward(cache, p, g)

    def f():
        return float(np.sum(g * nn.conv1d_forward(x, p)[0]))

    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, p.weight)),
               rel_error(gb, numeric_grad(f, p.bias)))


def check_batchnorm(seed):
    rng = np.random.default_rng(seed)
    N, C, L = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 7))
    x = rng.standard_normal((N, C, L)) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
    p = nn.BatchNormParams.identity(C)
    p.gamma = rng.standard_normal(C)
    p.beta = rng.standard_normal(C)
    y, cache = nn.batchnorm_forward(x, p, train=True)
    g = rng.standard_normal(y.shape)
    gx, gg, gb = nn.batchnorm_backward(cache, g)

    def f():
        return float(np.sum(g * nn.batchnorm_forward(x, p, train=True)[0]))

    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gg, numeric_grad(f, p.gamma)),
               rel_error(gb, numeric_grad(f, p.beta)))


def check_relu(seed):
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, (2, 3, int(rng.integers(2, 9))))
    g = rng.standard_normal(x.shape)
    gx = nn.relu_backward(x, g)
    return rel_error(gx, numeric_grad(lambda: float(np.sum(g * nn.relu_forward(x))), x))


def check_maxpool(seed):
    rng = np.random.default_rng(seed)
    k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
    x = rng.standard_normal((2, 2, int(rng.integers(k, k + 9))))
    y, cache = nn.maxpool1d_forward(x, k, s)
    g = rng.standard_normal(y.shape)
    gx = nn.maxpool1d_backward(cache, g)
    return rel_error(gx, numeric_grad(lambda: float(np.sum(g * nn.maxpool1d_forward(x, k, s)[0])), x))


def check_avgpool(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 12))
    H_out = int(rng.integers(1, L + 1))
    x = rng.standard_normal((2, 3, L))
    y, cache = nn.adaptive_avgpool_forward(x, H_out)
    g = rng.standard_normal(y.shape)
    gx = nn.adaptive_avgpool_backward(cache, g)
    return rel_error(gx, numeric_grad(lambda: float(np.sum(g * nn.adaptive_avgpool_forward(x, H_out)[0])), x))


def check_linear(seed):
    rng = np.random.default_rng(seed)
    N, I, O = (int(v) for v in rng.integers(1, 6, size=3))
    x = rng.standard_normal((N, I))
    p = nn.LinearParams(rng.standard_normal((O, I)), rng.standard_normal(O))
    g = rng.standard_normal((N, O))
    gx, gw, gb = nn.linear_backward(x, p, g)

    def f():
        return float(np.sum(g * nn.linear_forward(x, p)))

    return max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, p.weight)),
               rel_error(gb, numeric_grad(f, p.bias)))


def check_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    N, C = int(rng.integers(1, 6)), int(rng.integers(2, 6))
    logits = rng.standard_normal((N, C)) * 2
    labels = rng.integers(0, C, N)
    _, g = nn.cross_entropy(logits, labels)
    return rel_error(g, numeric_grad(lambda: nn.cross_entropy(logits, labels)[0], logits))


TINY = M.DhrnConfig(input_len=64, width_multiplier=0.0625)


def check_tiny_model(seed, n_params=50):
    """Joint two-head loss on the tiny network, at ``n_params`` sampled parameters."""
    rng = np.random.default_rng(seed)
    model = M.build_dhrn(TINY, seed=seed, dtype=np.float64)
    x = rng.standard_normal((4, 1, TINY.input_len))
    yb = rng.integers(0, 4, 4)
    ya = rng.integers(0, 2, 4)

    def loss():
        lb, la, _ = M.model_forward(model, x, M.Mode.TRAIN)
        return nn.cross_entropy(lb, yb)[0] + nn.cross_entropy(la, ya)[0]

    lb, la, cache = M.model_forward(model, x, M.Mode.TRAIN)
    grads = M.model_backward(model, cache, nn.cross_entropy(lb, yb)[1], nn.cross_entropy(la, ya)[1])
    params = model.parameters()
    names = sorted(params)
    sizes = np.array([params[n].size for n in names])
    worst = 0.0
    # every tensor at least once, the rest sampled proportional to size
    picks = list(range(len(names))) + list(rng.choice(len(names), max(0, n_params - len(names)), p=sizes / sizes.sum()))
    for t in picks:
        name = names[t]
        flat_i = int(rng.integers(params[name].size))
        num = numeric_grad(loss, params[name], idx=[flat_i])
        worst = max(worst, rel_error(grads[name].reshape(-1)[flat_i], num))
    return worst


CHECKS = {
    "conv1d": check_conv1d,
    "batchnorm": check_batchnorm,
    "relu": check_relu,
    "maxpool1d": check_maxpool,
    "adaptive_avgpool": check_avgpool,
    "linear": check_linear,
    "cross_entropy": check_cross_entropy,
    "tiny_model": check_tiny_model,
}


def run_all(seed: int = 0, n_seeds: int = 20, ops=None) -> list[CheckResult]:
    results = []
    for op in ops or CHECKS:
        for i in range(n_seeds):
            s = seed * 1000 + i
            results.append(CheckResult(op, s, CHECKS[op](s)))
    return results
