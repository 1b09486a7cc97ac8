"""Energy-based OOD detection with gradient-norm regularization.

Library layout:
  autodiff  - graph/tape reverse-mode engine with recorded backward passes
  model     - small MLPs, deterministic init, checkpoints, linear-region probe
  scores    - energy / max-softmax detection scores and input gradients
  losses    - cross-entropy, energy margin loss, gradient-norm penalty
  sampler   - energy-based cluster sampling of auxiliary outliers
  trainer   - SGD + momentum loop with cosine schedule and trajectory log
  metrics   - FPR@TPR, AUROC, score histograms, evaluation reports
  certify   - Lipschitz-based detection-radius certificates
  data      - toy generators, IDX tensors, splits, CSV datasets
  config    - run configuration files and manifests
  cli       - the `greg-ood` command line
"""

from .autodiff import Graph, GraphError, NonFiniteError, Tensor, gradient
from .certify import certified_radius, certify_dataset, verify_radius
from .config import ConfigError, load_config, render_config, resolve_config
from .data import LabeledSet, circle_means, gen_gaussian_mixture, gen_ring, split
from .losses import LossConfig
from .metrics import (auroc, evaluate_scores, fpr_at_tpr, overlap_coefficient,
                      threshold_at_tpr)
from .model import MlpModel, init_mlp, load_model, save_model
from .sampler import kmeans, sample_batch
from .scores import input_grad_norms, model_scores, score_input_gradient
from .trainer import NumericError, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Graph", "GraphError", "NonFiniteError", "Tensor", "gradient",
    "certified_radius", "certify_dataset", "verify_radius",
    "ConfigError", "load_config", "render_config", "resolve_config",
    "LabeledSet", "circle_means", "gen_gaussian_mixture", "gen_ring", "split",
    "LossConfig",
    "auroc", "evaluate_scores", "fpr_at_tpr", "overlap_coefficient",
    "threshold_at_tpr",
    "MlpModel", "init_mlp", "load_model", "save_model",
    "kmeans", "sample_batch",
    "input_grad_norms", "model_scores", "score_input_gradient",
    "NumericError", "TrainConfig", "train",
    "__version__",
]
