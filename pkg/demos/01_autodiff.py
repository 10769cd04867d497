"""Tour of the reverse-mode tensor core.

Builds a small expression graph, pulls gradients back through it, and
cross-checks one of them against a central finite difference.  Finishes
with the no_grad escape hatch used by evaluation code.
"""

import numpy as np

from pcnn import tensor as T
from pcnn.tensor import Parameter, Tensor

rng = np.random.default_rng(7)

# y = sum(leaky_relu(x @ w + b) * c): one dense layer and a projection
x = Tensor(rng.normal(size=(3, 4)))
w = Parameter(rng.normal(size=(4, 2)))
b = Parameter(rng.normal(size=(2,)))
c = Tensor(rng.normal(size=(3, 2)))

def forward():
    h = T.leaky_relu(T.add(T.matmul(x, w), b), 0.2)
    return T.sum_over_axis(T.reshape(T.mul(h, c), (6,)), 0)

y = forward()
y.backward()
print("y          =", float(y.data))
print("dy/db      =", b.grad)

# central difference on b[0] must agree to ~1e-9
h = 1e-6
keep = b.data[0]
with T.no_grad():
    b.data[0] = keep + h
    up = float(forward().data)
    b.data[0] = keep - h
    down = float(forward().data)
    b.data[0] = keep
numeric = (up - down) / (2 * h)
print("numeric    =", numeric)
print("difference =", abs(numeric - b.grad[0]))

# inside no_grad nothing is recorded, so backward has nothing to do
with T.no_grad():
    silent = forward()
print("no_grad output matches:", np.allclose(silent.data, y.data))
