"""
Exception hierarchy shared by every module.

CLI exit codes:
- 1 : validation problems (bad input data, bad config, shape mismatches)
- 2 : runtime failures (divergence, corrupt checkpoints, locked output dir)
"""

from typing import Iterable, List

from pydantic import ValidationError


class SDMError(Exception):
    """Base class for all errors raised by this package."""


class DataValidationError(SDMError, ValueError):
    """Input data or a precondition is invalid."""


class SingularWeightError(DataValidationError):
    """The full weighted loss is singular because some species has n_p(s) = n."""

    def __init__(self, species: Iterable[int]):
        self.species: List[int] = sorted(int(s) for s in species)
        listed = ", ".join(str(s) for s in self.species[:20])
        if len(self.species) > 20:
            listed += f", ... ({len(self.species)} total)"
        super().__init__(f"full-weighted loss singular for species {listed} (w_s <= 1, i.e. n_p(s) = n)")


class ShapeMismatchError(DataValidationError):
    """Two artifacts disagree on a dimension (species count, input width, ...)."""


class CheckpointError(SDMError):
    """A checkpoint file cannot be read."""


class TrainingError(SDMError, RuntimeError):
    """Non-finite values appeared during training."""


class OutputLockedError(SDMError, RuntimeError):
    """Another run holds the lockfile of the output directory."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (DataValidationError, ValidationError)):
        return 1
    return 2
