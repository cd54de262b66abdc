"""Latent embedding alignment: constrained MLP regression plus two
enhancement procedures, with a synthetic-world harness that verifies
their safety and enhancement behavior.

The building blocks:

* :mod:`embalign.nn` - the constrained network family, norms,
  projection/prox operators, and exact gradients.
* :mod:`embalign.train` - proximal-projected SGD with theory-driven
  penalty rates.
* :mod:`embalign.isl` - inverse semi-supervised learning (inverse map,
  pseudo-pair augmentation, residual debiasing).
* :mod:`embalign.mtl` - meta transfer learning (sparse aggregation of
  frozen source models plus residual correction).
* :mod:`embalign.world` / :mod:`embalign.metrics` /
  :mod:`embalign.diagnostics` - synthetic ground-truth worlds,
  embedding-space evaluation, and assumption diagnostics.
* :mod:`embalign.bench` - seeded verification suites; ``embalign.cli``
  exposes everything on the command line.
"""

__version__ = "0.1.0"

from .data import PairedDataset, UnpairedResponses
from .isl import IslArchitectures, IslModel, fit_isl, predict_isl
from .metrics import EvalReport, evaluate
from .mtl import MtlModel, SourceBank, fit_mtl, predict_mtl
from .nn import Activation, MlpParams, forward, forward_batch
from .train import (
    AlignmentModel,
    Architecture,
    FixedPenalty,
    TheoryRate,
    TrainConfig,
    fit_baseline,
)
from .world import WorldSpec, generate

__all__ = [
    "__version__",
    "Activation",
    "AlignmentModel",
    "Architecture",
    "EvalReport",
    "FixedPenalty",
    "IslArchitectures",
    "IslModel",
    "MlpParams",
    "MtlModel",
    "PairedDataset",
    "SourceBank",
    "TheoryRate",
    "TrainConfig",
    "UnpairedResponses",
    "WorldSpec",
    "evaluate",
    "fit_baseline",
    "fit_isl",
    "fit_mtl",
    "forward",
    "forward_batch",
    "generate",
    "predict_isl",
    "predict_mtl",
]
