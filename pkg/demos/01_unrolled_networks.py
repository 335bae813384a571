"""Unrolled ISTA is classical ISTA with the per-layer matrices exposed.

We build the default compressed-sensing instance (real DFT rows, 15% sparse
targets, uniform noise), run plain ISTA for a few iterations and then the
depth-L unrolled network initialised at W = I - A^T A. The two agree to
machine precision; what the network adds is the freedom to train each W^l.
"""

import numpy as np

from unrollgen.networks import classical_ista, forward, init_weights
from unrollgen.problem import ProblemConfig, build_sensing_matrix, generate_dataset

cfg = ProblemConfig()
sensing = build_sensing_matrix(cfg)
data = generate_dataset(cfg, sensing, 5, "test", (7,))
print(f"A is {sensing.shape[0]}x{sensing.shape[1]}, each target has {cfg.sparsity} nonzeros")

lam = 0.05
for L in (1, 5, 10):
    net = init_weights("ista", sensing, L, lam)
    gap = max(np.abs(forward(net, sensing, y).h[-1] - classical_ista(sensing, y, lam, L)).max() for y in data.Y)
    err = np.mean([np.linalg.norm(forward(net, sensing, y).h[-1] - x) for x, y in zip(data.X, data.Y)])
    print(f"L={L:2d}: network vs iteration {gap:.1e}, mean recovery error {err:.3f}")
