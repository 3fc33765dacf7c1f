"""Tape-based reverse-mode differentiation in a few lines.

Builds a small expression graph, runs backward, and confirms the analytic
gradients against central finite differences.
"""

import numpy as np

from stepalign import Graph, Tensor, grad_check

# forward: loss = sum(tanh(W @ x + b))
rng = np.random.default_rng(0)
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(rng.normal(size=3), requires_grad=True)
x = Tensor(rng.normal(size=4))

g = Graph()
loss = g.sum(g.tanh(g.add(g.matmul(w, x), b)))
print(f"loss = {loss.item():.6f}")

g.backward(loss)
print("dL/db =", np.round(b.grad, 4))

# the same gradients, checked against a finite-difference oracle
def rebuild(_params):
    graph = Graph()
    return graph.sum(graph.tanh(graph.add(graph.matmul(w, x), b)))

err = grad_check(rebuild, [w, b], epsilon=1e-5)
print(f"max relative error vs central differences: {err:.2e}")

# gradients accumulate across fan-out: d/dx of (x . x) is 2x
g2 = Graph()
v = Tensor([1.0, 2.0, 3.0], requires_grad=True)
g2.backward(g2.dot(v, v))
print("d(v.v)/dv =", v.grad, "(= 2v)")
