"""Subspace representations of local feature grids for few-shot classification."""
from .errors import DimensionError, FormatError, NumericalError, NumericalWarning, SubspaceError
from .evaluation import (
    Episode, EpisodeResult, EvalConfig, EvalReport, SweepReport, confidence_interval, evaluate,
    run_episode, sample_episode, sweep_basis_size)
from .feature_io import (
    ClassRecord, Dataset, FeatureGrid, SyntheticConfig, flatten, generate_synthetic_dataset,
    load_dataset, load_feature_grid, save_dataset, save_feature_grid, shuffle_labels, unflatten)
from .metric import (
    ClassScores, DistanceKind, distance, nll_loss, pairwise_distances, projection_fnorm,
    softmax_classify, wsd)
from .reference import reference_synthetic_config
from .stiefel import (
    StiefelOptConfig, cayley_step, optimize_on_stiefel, projection_fnorm_grad_basis,
    wsd_grad_basis)
from .subspace import (
    ActivationMap, Subspace, basis_activation_map, extract_subspace, extract_subspaces,
    reconstruction_error)
from .templates import (
    Strategy, SupportSet, TemplateSet, build_templates, discriminative_subspaces, nn_classify,
    prototypical_subspace, prototypical_templates, union_subspace, union_templates)

__version__ = "0.1.0"
