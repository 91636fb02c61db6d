"""
Subspaces of a feature grid and the distances between them
===========================================================

A grid of local features is summarized by the leading left singular
vectors of its d x (h*w) matrix, weighted by normalized singular values.
"""
import numpy as np

from subspace_fewshot import (FeatureGrid, basis_activation_map, extract_subspace, flatten,
                              projection_fnorm, reconstruction_error, wsd)

rng = np.random.default_rng(0)

# two 4x4 grids of 12-d features, both dominated by the same 2-d pattern
pattern = np.linalg.qr(rng.standard_normal((12, 2)))[0]
a = FeatureGrid(rng.standard_normal((4, 4, 2)) @ pattern.T + 0.05 * rng.standard_normal((4, 4, 12)))
b = FeatureGrid(rng.standard_normal((4, 4, 2)) @ pattern.T + 0.05 * rng.standard_normal((4, 4, 12)))
c = FeatureGrid(rng.standard_normal((4, 4, 12)))

sa, sb, sc = (extract_subspace(flatten(g), 3) for g in (a, b, c))
print("weights of a:", np.round(sa.weights, 3))
print("basis is orthonormal:", np.allclose(sa.basis.T @ sa.basis, np.eye(3)))

# the squared residual ||H - UU^T H||^2 falls as the basis grows
for s in (1, 2, 3, 6):
    err = reconstruction_error(flatten(a), extract_subspace(flatten(a), s).basis)
    print(f"s={s}  squared residual {err:.4f}")

# WSD sees the shared pattern; the unweighted projection distance is swamped
# by the third (noise) direction, which it counts as much as the others
print(f"wsd(a, b) = {wsd(sa, sb):.3f}   wsd(a, c) = {wsd(sa, sc):.3f}")
print(f"projfn(a, b) = {projection_fnorm(sa, sb):.3f}   projfn(a, c) = {projection_fnorm(sa, sc):.3f}")

# where in the grid does the first basis vector fire?
act = basis_activation_map(a, sa, 0)
print("activation of component 0:")
print(np.round(act.values, 2))
