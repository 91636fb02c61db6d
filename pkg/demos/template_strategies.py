"""
Class templates from a few support grids
========================================

One 5-way 5-shot episode on the bundled synthetic reference data, scored
with each template strategy.
"""
import numpy as np

from subspace_fewshot import (EvalConfig, SupportSet, build_templates, generate_synthetic_dataset,
                              reference_synthetic_config, run_episode, sample_episode)

data = generate_synthetic_dataset(reference_synthetic_config())
print(data.num_classes, "classes,", data.class_sizes[0], "grids each, grid shape", data.grid_shape)

base = EvalConfig(ways=5, shots=5, queries=15, basis_size=5, seed=42)
for i in range(3):
    ep = sample_episode(data, base, i)
    line = []
    for strategy in ("union", "nn", "ps", "ds"):
        cfg = EvalConfig(ways=5, shots=5, queries=15, basis_size=5, seed=42, template=strategy)
        line.append(f"{strategy}={run_episode(data, ep, cfg).accuracy:.3f}")
    print(f"episode {i} classes {ep.classes}:", "  ".join(line))

# the discriminative templates are trained on the support set only; the trace
# holds the summed support loss, which should fall
ep = sample_episode(data, base, 0)
mats = [[data.matrices[data.flat_index(c, g)] for c, g in row] for row in ep.support]
support = SupportSet.from_matrices(mats, 5)
ds = build_templates(support, "ds", 5)
print("support loss: start %.3f  end %.3f" % (ds.trace[0], ds.trace[-1]))
print("templates orthonormal:", all(np.allclose(t.basis.T @ t.basis, np.eye(5)) for t in ds))
