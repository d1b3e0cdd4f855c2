"""Exception types raised across the bqnn package.

Every error carries enough context (node id, blob index, file offset) to
point at the offending part of a model without re-parsing it.
"""


class BqnnError(Exception):
    """Base class for all bqnn errors."""


# --- container / graph parsing -------------------------------------------

class ModelFormatError(BqnnError):
    """Malformed container file or graph document."""


class BadMagic(ModelFormatError):
    pass


class VersionUnsupported(ModelFormatError):
    pass


class TruncatedBlob(ModelFormatError):
    pass


class DanglingInput(ModelFormatError):
    pass


class CyclicGraph(ModelFormatError):
    pass


class AlreadyLowered(ModelFormatError):
    """A lowered container was given where a pre-lowering model is required."""


class NotLowered(ModelFormatError):
    """A pre-lowering container was given where a lowered model is required."""


# --- graph transforms ------------------------------------------------------

class TransformError(BqnnError):
    pass


class MarkerOnNonWeightEdge(TransformError):
    pass


class NonFiniteWeight(TransformError):
    pass


class NonAffineNodeInChain(TransformError):
    pass


class ZeroScaleChannel(TransformError):
    pass


class NonMonotoneActivation(TransformError):
    pass


class UnfoldableSubgraph(TransformError):
    pass


# --- layout / packing ------------------------------------------------------

class LayoutError(BqnnError):
    pass


class AlreadyDepthInnermost(LayoutError):
    pass


class WrongLayout(LayoutError):
    pass


class WrongDtype(LayoutError):
    pass


class NonZeroPadBits(LayoutError):
    pass


class KernelDepthMismatch(LayoutError):
    pass


# --- engine ----------------------------------------------------------------

class EngineError(BqnnError):
    pass


class ShapeMismatch(EngineError):
    pass


class LayoutMismatch(EngineError):
    pass


class PlaneCountMismatch(EngineError):
    pass


class ChannelMismatch(EngineError):
    pass


# --- accelerator model -----------------------------------------------------

class AccelError(BqnnError):
    pass


class BudgetTooSmall(AccelError):
    pass


class NotBinarizedLayer(AccelError):
    pass


# --- code generation / cli -------------------------------------------------

class UnsupportedNode(BqnnError):
    pass


class UnknownArchitecture(BqnnError):
    pass
