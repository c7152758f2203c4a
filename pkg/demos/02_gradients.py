"""Checking hand-written backward passes against finite differences.

Every layer in the network has an explicit backward function. Here we nudge
inputs by +-h and compare the slope with what backward returns.
"""
import numpy as np

from dhrn import gradcheck, nn

rng = np.random.default_rng(0)
x = rng.standard_normal((2, 3, 20))
p = nn.Conv1dParams(rng.standard_normal((4, 3, 5)), rng.standard_normal(4), stride=2, pad_left=2, pad_right=2)
y, cache = nn.conv1d_forward(x, p)
g = rng.standard_normal(y.shape)

# loss = sum(y * g), so d loss / d y = g
gx, gw, gb = nn.conv1d_backward(cache, p, g)


def loss():
    return float(np.sum(nn.conv1d_forward(x, p)[0] * g))


num_x = gradcheck.numeric_grad(loss, x)
num_w = gradcheck.numeric_grad(loss, p.weight)
print("conv1d  d/dx rel err", gradcheck.rel_error(gx, num_x))
print("conv1d  d/dw rel err", gradcheck.rel_error(gw, num_w))

# the same check for every op (and a small whole model), a few seeds each
worst = {}
for r in gradcheck.run_all(seed=0, n_seeds=3):
    worst[r.op] = max(worst.get(r.op, 0.0), r.max_rel_error)
for op, err in worst.items():
    print(f"{op:<18} {err:.2e}  {'ok' if err <= gradcheck.TOL else 'FAIL'}")
