# "errors.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Every error raised by libRDGSPy is a ValueError underneath, so code that only catches ValueError still works. The
# subclasses exist for the places where callers need to tell failures apart (mostly the bitstream decoder).


class PlyParseError(ValueError):
    """A PLY file could not be parsed. The message names the offending property when there is one."""


class DomainError(ValueError):
    """An input is outside the domain of an operation (zero-norm quaternion, zero-sized image, bad camera)."""


class ShapeMismatchError(ValueError):
    """Two arrays that must agree in shape do not."""


class EmptyCodebookError(ValueError):
    """A codebook with no codewords was used for selection, or an index stream has no codewords to refer to."""


class EmptySceneError(ValueError):
    """Every Gaussian was pruned, so there is nothing left to encode."""


class NonFiniteLossError(ValueError):
    """A loss component became NaN or infinite. The attribute `component` names it."""
    def __init__(self, component: str, value: float):
        super().__init__("Loss component '" + component + "' is not finite (" + str(value) + ").")
        self.component = component
        self.value = value


class BadMagicError(ValueError):
    """The data does not start with the GRDO magic."""


class UnsupportedVersionError(ValueError):
    """The bitstream was written by a format version this library cannot read."""


class TruncatedStreamError(ValueError):
    """The bitstream ended in the middle of a section. The attribute `section` names it."""
    def __init__(self, section: str, needed: int, available: int):
        super().__init__("The bitstream is truncated in section '" + section + "': needed " + str(needed) +
                         " bytes, but only " + str(available) + " remain.")
        self.section = section


class IndexRangeError(ValueError):
    """A decoded index does not refer to a codeword in its codebook."""


class ClusterStartsError(ValueError):
    """The 8 SH-mask cluster starts in the header are not nondecreasing or exceed the Gaussian count."""


class UsageError(ValueError):
    """The command line was used incorrectly. The CLI exits with code 2 for these."""
