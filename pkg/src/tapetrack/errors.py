"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so that the CLI can
emit it in its error JSON.
"""


class TapeTrackError(ValueError):
    code = "error"


class BehindCameraError(TapeTrackError):
    code = "behind-camera"


class DegeneratePairError(TapeTrackError):
    code = "degenerate-pair"


class UnderdeterminedFitError(TapeTrackError):
    code = "underdetermined-fit"


class InvalidRowsError(TapeTrackError):
    code = "invalid-rows"


class EmptyFeasibilityError(TapeTrackError):
    code = "empty-feasibility"


class InvalidEdgeClassError(TapeTrackError):
    code = "invalid-edge-class"


class AlignmentError(TapeTrackError):
    code = "alignment-error"


class UnderdeterminedPlaneError(TapeTrackError):
    code = "underdetermined-plane"


class SceneMisconfiguredError(TapeTrackError):
    code = "scene-misconfigured"
