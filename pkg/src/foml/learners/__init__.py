"""Online learners behind one observe/update interface.

The capability split is part of the contract: `FomlLearner` and `ToeLearner`
consume plain labeled batches (no boundary channel exists on their step
signature); `TfsLearner`, `FtlLearner` and `FtmlLearner` require explicit
task-boundary flags from the harness.
"""

from .baselines import BaselineHyper, FtlLearner, TfsLearner, ToeLearner
from .common import StepInfo, regularizer, regularizer_tensor, split_batch
from .foml import FomlHyper, FomlLearner
from .ftml import FtmlHyper, FtmlLearner

LEARNER_KINDS = {
    "foml": FomlLearner,
    "tfs": TfsLearner,
    "toe": ToeLearner,
    "ftl": FtlLearner,
    "ftml": FtmlLearner,
}


def needs_boundaries(kind):
    return LEARNER_KINDS[kind].needs_boundaries


__all__ = [
    "BaselineHyper",
    "FomlHyper",
    "FomlLearner",
    "FtlLearner",
    "FtmlHyper",
    "FtmlLearner",
    "LEARNER_KINDS",
    "StepInfo",
    "TfsLearner",
    "ToeLearner",
    "needs_boundaries",
    "regularizer",
    "regularizer_tensor",
    "split_batch",
]
