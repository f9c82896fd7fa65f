"""
Reverse-mode gradients with seapp.tensor
========================================

Build a small expression, backpropagate through it and compare the result
with central differences.
"""

import numpy as np

from seapp import tensor as T

# parameters accumulate gradients, plain tensors are constants
w = T.parameter([[0.5, -1.0], [2.0, 0.3]])
x = T.tensor([[1.0, 2.0], [3.0, -1.0]])

# a softmax-weighted sum of a matrix product
logits = x @ w
loss = T.sum_(T.softmax_lastdim(logits) * logits)
loss.backward()
print("loss     ", loss.item())
print("dloss/dw\n", w.grad)

# the tape is the set of recorded ops, in the order they ran
tape = T.Tape.from_root(loss)
print("ops on tape:", [n.op for n in tape.nodes])

# grad_check rebuilds the graph for every perturbation
rel = T.grad_check(lambda: T.sum_(T.softmax_lastdim(x @ w) * (x @ w)), [w])
print(f"max relative error vs central differences: {rel:.2e}")

# inside no_grad nothing is recorded
with T.no_grad():
    y = T.exp(w)
print("recorded under no_grad:", y.node is not None)

# logsumexp stays finite where a naive exp overflows
big = np.array([1000.0, 999.0, -50.0])
print("logsumexp of large logits:", T.logsumexp_lastdim(T.tensor(big)).item())
