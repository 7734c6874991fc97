"""Response container and clinical covariate schema."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"
COX = "cox"

RESPONSE_KINDS = (GAUSSIAN, BINOMIAL, COX)

# Clinical covariate kinds. Continuous and ordinal columns split on
# thresholds; categorical columns split on level subsets. Only continuous
# columns enter the regression linearly.
CONTINUOUS = "continuous"
ORDINAL = "ordinal"
CATEGORICAL = "categorical"

CLINICAL_KINDS = (CONTINUOUS, ORDINAL, CATEGORICAL)


@dataclass(frozen=True)
class Response:
    """A response vector of one of the three supported kinds.

    For ``cox`` responses ``y`` holds the observed times and ``status``
    the event indicators (1 event, 0 censored); otherwise ``status`` is
    None.
    """

    kind: str
    y: np.ndarray
    status: np.ndarray = None

    def __post_init__(self):
        if self.kind not in RESPONSE_KINDS:
            raise DataError(f"unknown response kind: {self.kind!r}")
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.kind == COX:
            if self.status is None:
                raise DataError("survival response requires event indicators")
            status = np.asarray(self.status, dtype=float)
            if status.shape != self.y.shape:
                raise DataError("time and status lengths differ")
            if not np.all(np.isin(status, (0.0, 1.0))):
                raise DataError("survival status must be 0 or 1")
            if np.any(self.y <= 0):
                raise DataError("survival times must be positive")
            object.__setattr__(self, "status", status)
        elif self.kind == BINOMIAL:
            if not np.all(np.isin(self.y, (0.0, 1.0))):
                raise DataError("binomial response must be 0 or 1")

    @classmethod
    def gaussian(cls, y):
        return cls(GAUSSIAN, y)

    @classmethod
    def binomial(cls, y):
        return cls(BINOMIAL, y)

    @classmethod
    def survival(cls, time, status):
        return cls(COX, time, status)

    @property
    def n(self):
        return self.y.shape[0]

    def subset(self, idx):
        status = None if self.status is None else self.status[idx]
        return Response(self.kind, self.y[idx], status)
