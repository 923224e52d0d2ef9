"""Exception hierarchy shared by all facemap modules.

The CLI maps these to exit codes: I/O problems exit with 2, validation
failures with 3, numerical failures with 4.
"""


class FacemapError(Exception):
    """Base class for every error raised by facemap."""


class ValidationError(FacemapError, ValueError):
    """Input violates a documented invariant or precondition."""


class MeshFormatError(ValidationError):
    """A mesh file could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)


class TopologyError(ValidationError):
    """Mesh connectivity is unsuitable (non-manifold or disconnected)."""


class NumericalError(FacemapError, ArithmeticError):
    """A factorization, eigensolve or least-squares problem failed."""


class DegenerateEmbeddingError(NumericalError):
    """The distance matrix does not support a 2D embedding."""


class AtlasError(NumericalError):
    """The planar embedding cannot be rasterized into a usable atlas."""


class BankError(ValidationError):
    """A reference bank lacks a required exemplar."""
