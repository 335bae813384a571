"""Training an unrolled network with hand-written backpropagation.

First the analytic gradient of one weight entry is compared with a central
finite difference. Then a depth-4 ISTA network is fitted on 200 samples by
minibatch SGD and scored on a held-out set, next to its untrained start.
"""

import numpy as np

from unrollgen.networks import init_weights, predict
from unrollgen.problem import ProblemConfig, build_sensing_matrix, generate_dataset
from unrollgen.rng import child_stream
from unrollgen.training import TrainConfig, backward, evaluate, loss, train

cfg = ProblemConfig()
sensing = build_sensing_matrix(cfg)
train_set = generate_dataset(cfg, sensing, 200, "train", (0,))
test_set = generate_dataset(cfg, sensing, 2000, "test")

net = init_weights("ista", sensing, 4, 0.1, perturb_scale=0.02, rng=child_stream(0, "demo-init"))
x, y = train_set.X[0], train_set.Y[0]
_, grads = backward(net, sensing, (x, y))
h = 1e-6
idx = np.unravel_index(np.argmax(np.abs(grads.W1)), grads.W1.shape)
shifted = []
for sign in (1, -1):
    W1 = net.W1.copy()
    W1[idx] += sign * h
    shifted.append(loss(predict(net.with_weights(W1), sensing, y[None]), x[None]))
print(f"dL/dW1{tuple(int(i) for i in idx)}: backprop {grads.W1[idx]:.8f}, finite difference {(shifted[0] - shifted[1]) / (2 * h):.8f}")

trained, history = train(net, sensing, train_set, TrainConfig(learning_rate=0.3, epochs=60, seed=1))
print(f"train loss {history[0]:.4f} -> {history[-1]:.4f} over {len(history)} epochs")
print(f"test loss  {evaluate(net, sensing, test_set):.4f} -> {evaluate(trained, sensing, test_set):.4f}")
