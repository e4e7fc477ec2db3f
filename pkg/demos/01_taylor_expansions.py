"""How well do order-k Taylor expansions track a network as it moves away from init?

Displaces a small softplus MLP along a fixed random direction and prints the
gap between the network and its order-k expansion at several step sizes.
The gap shrinks roughly like eps^(k+1).
"""

import numpy as np

from taylorized.models import Architecture, forward_full, forward_taylorized, init_params

arch = Architecture("mlp", (8, 32, 32, 2), "softplus(1)")
p0 = init_params(arch, seed=0)
rng = np.random.default_rng(1)
direction = {n: rng.standard_normal(v.shape) for n, v in p0.theta.items()}
x = rng.standard_normal((16, 8))

print(f"{'eps':>8} " + " ".join(f"{'k=' + str(k):>11}" for k in range(1, 5)))
for eps in (0.3, 0.1, 0.03, 0.01):
    p = p0.with_theta({n: p0.theta[n] + eps * direction[n] for n in direction})
    f = forward_full(arch, p, x)
    gaps = [np.linalg.norm(f - forward_taylorized(arch, p, x, k)) for k in range(1, 5)]
    print(f"{eps:>8.2f} " + " ".join(f"{g:>11.3e}" for g in gaps))

# a square-activation net is a polynomial in its parameters, so a high enough
# order reproduces it exactly
sq = Architecture("mlp", (8, 16, 2), "square")
ps = init_params(sq, seed=2)
ps = ps.with_theta({n: v + rng.standard_normal(v.shape) for n, v in ps.theta.items()})
print("square net, |f - f^(4)| =", np.max(np.abs(forward_full(sq, ps, x) - forward_taylorized(sq, ps, x, 4))))
