"""
Descent on orthonormal bases
============================

Cayley steps keep a basis orthonormal while following a gradient.  Here a
single direction is pulled toward a target line under WSD.
"""
import numpy as np

from subspace_fewshot import (StiefelOptConfig, Subspace, cayley_step, optimize_on_stiefel, wsd,
                              wsd_grad_basis)

rng = np.random.default_rng(3)
d = 8
target = Subspace(np.linalg.qr(rng.standard_normal((d, 1)))[0], [1.0])
u0 = np.linalg.qr(rng.standard_normal((d, 1)))[0]

# one step with a large stride stays on the sphere
z = wsd_grad_basis(Subspace(u0, [1.0]), target)
u1 = cayley_step(u0, z, 2.0)
print("norm after one step:", float(np.linalg.norm(u1)))


def grad(u):
    return wsd_grad_basis(Subspace(u, [1.0]), target)


def objective(u):
    return wsd(Subspace(u, [1.0]), target)


for alpha in (0.3, 0.1, 0.03):
    u, trace = optimize_on_stiefel(grad, u0, StiefelOptConfig(step_size=alpha, iterations=50),
                                   objective=objective)
    print(f"alpha={alpha:<5} D: start {trace[0]:.3f}  after 10 {trace[10]:.3f}  end {trace[-1]:.4f}")

# fixed steps stall at a distance of about alpha; the distance is a cone at the
# target, so the iterate keeps hopping across it rather than settling
