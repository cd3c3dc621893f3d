"""The numpy network engine: forward, backward, and a finite-difference check."""
import numpy as np

from pmu_events import nn

rng = np.random.default_rng(0)
net = [nn.Conv2d(4, 6, 3, 1, 1), nn.ReLU(), nn.ResidualBlock((nn.Conv2d(6, 8, 3, 2), nn.Conv2d(8, 8)), nn.Conv2d(6, 8, 1, 2, 0)), nn.GlobalAvgPool(),
       nn.Dense(8, 4), nn.Softmax()]
params = {k: v + 0.1 * rng.standard_normal(v.shape)  # perturb the zero-initialized convs
          for k, v in nn.init_params(net, rng, np.float64).items()}
x = rng.standard_normal((2, 8, 6, 4))
R = rng.standard_normal((2, 4))

out, cache = nn.forward(net, x, params)
grads, gx = nn.backward(net, cache, R, params)
print("output rows sum to one:", np.allclose(out.sum(axis=1), 1.0))
print("parameter count:", nn.count_params(params))


def loss():
    return float((nn.forward(net, x, params)[0] * R).sum())


h = 1e-5
for name in sorted(params)[:4]:
    p = params[name]
    i = tuple(rng.integers(s) for s in p.shape)
    old = p[i]
    p[i] = old + h
    up = loss()
    p[i] = old - h
    down = loss()
    p[i] = old
    fd = (up - down) / (2 * h)
    print(f"{name:28s} analytic={grads[name][i]: .6e} numeric={fd: .6e}")
