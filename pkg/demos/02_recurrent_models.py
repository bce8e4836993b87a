"""The three recurrent classifiers and their training step.

Every model is embedding -> recurrent layer -> ReLU dense -> three sigmoid
scores.  The embedding table is frozen and shared, so it is not a parameter.
"""
import numpy as np

from fedtext.seqnet import (ArchitectureSpec, ModelParameters, init_parameters, loss, loss_and_gradients, predict,
                            train_local_epoch)

for kind in ("rnn", "gru", "lstm"):
    arch = ArchitectureSpec(kind)
    print(f"{kind:>4}: {arch.parameter_count():,} trainable parameters at full size")

# Gradients come from hand-written backpropagation through time; a central
# difference on a single weight is a quick sanity check.
arch = ArchitectureSpec("lstm", embed_dim=4, recurrent_units=3, dense_units=3, max_seq_len=5)
rng = np.random.default_rng(0)
params = init_parameters(arch, seed=0)
table = rng.normal(size=(10, 4))
table[0] = 0.0
ids, y = rng.integers(0, 10, size=(4, 5)), np.array([0, 1, 2, 1])
value, grads = loss_and_gradients(params, table, ids, y)
layers = {n: t.copy() for n, t in params}
eps = 1e-5
layers["recurrent/kernel"][0, 0] += eps
up = loss(ModelParameters(arch, layers), table, ids, y)
layers["recurrent/kernel"][0, 0] -= 2 * eps
down = loss(ModelParameters(arch, layers), table, ids, y)
print(f"loss {value:.5f}; d/dW[0,0] analytic {grads['recurrent/kernel'][0, 0]:.6e}, "
      f"numeric {(up - down) / (2 * eps):.6e}")

# A few epochs on a toy problem where the last token decides the class.
ids = rng.integers(1, 10, size=(96, 5))
y = ids[:, -1] % 3
state = None
for epoch in range(15):
    res = train_local_epoch(params, table, ids, y, lr=0.05, batch_size=16, seed=epoch, optimizer=state)
    params, state = res.params, res.optimizer
    if epoch % 5 == 4:
        print(f"epoch {epoch + 1}: mean loss {res.mean_loss:.4f}, "
              f"train accuracy {np.mean(predict(params, table, ids) == y):.2f}")
