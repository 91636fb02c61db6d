"""
How many basis vectors?
=======================

Accuracy of union templates for 5-way 1-shot episodes as the subspace grows.
"""
from dataclasses import replace

from subspace_fewshot import EvalConfig, generate_synthetic_dataset, reference_synthetic_config
from subspace_fewshot.evaluation import sweep_basis_size

data = generate_synthetic_dataset(reference_synthetic_config())
cfg = EvalConfig(ways=5, shots=1, queries=15, episodes=200, template="union", seed=7)

for metric in ("wsd", "projfn"):
    sweep = sweep_basis_size(data, [1, 2, 4, 6, 8, 12], replace(cfg, metric=metric))
    print(metric)
    print(sweep.to_csv())
