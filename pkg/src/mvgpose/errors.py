"""Exception hierarchy shared across the package."""


class MvgError(Exception):
    """Base class for all package-specific errors."""


class NonOrthonormal(MvgError):
    """Matrix handed in as a rotation is not orthonormal."""


class BehindCamera(MvgError):
    """Point (or whole mesh) lies behind the camera plane."""


class InvalidDepth(MvgError):
    """Non-positive depth where a positive one is required."""


class Singular(MvgError):
    """Matrix is singular (or numerically close to it)."""


class BadCount(MvgError):
    """Requested selection count is out of range."""


class NoValidPose(MvgError):
    """Pose perturbation failed to find a valid candidate."""


class EmptyMesh(MvgError):
    """Mesh has no vertices or no triangles."""


class BadShape(MvgError):
    """Array shape incompatible with the operation."""


class EmptyCloud(MvgError):
    """Point-cloud assembly produced zero points."""


class NonFinite(MvgError):
    """NaN or Inf encountered where finite values are required."""


class ProvenanceOutOfRange(MvgError):
    """Point provenance refers to a pixel outside its view."""


class EmptyBatch(MvgError):
    """Loss or batch operation received zero frames."""


class InsufficientViews(MvgError):
    """Dataset object has fewer views than the batch requires."""


class NonFiniteLoss(MvgError):
    """Training loss became NaN/Inf; aborting with diagnostics."""


class EmptyMask(MvgError):
    """Segmentation mask has no foreground pixels."""


class Degenerate(MvgError):
    """Input too degenerate for the operation (e.g. tiny boundary)."""


class BudgetInfeasible(MvgError):
    """Occlusion budget cannot be satisfied (empty object mask)."""


class CorruptManifest(MvgError):
    """Dataset manifest or checksum mismatch."""


class ConfigError(MvgError):
    """Unknown key, bad type, or invalid value in a run config."""


class EmptyCaseList(MvgError):
    """Metric aggregate requested over zero cases."""


class EmptyVisibleSurface(MvgError):
    """VSD found no visible surface pixels for either pose."""
