"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parsable prefix of its one-line failure message.
"""


class EpigraphError(Exception):
    category = "error"


class ContractError(EpigraphError, ValueError):
    """Shape, dimension or precondition violation."""

    category = "contract"


class InvalidCameraError(EpigraphError, ValueError):
    category = "invalid-camera"


class DegeneratePairError(EpigraphError):
    category = "degenerate-pair"


class DegenerateGeometryError(EpigraphError):
    category = "degenerate-geometry"


class AtInfinityError(EpigraphError):
    category = "at-infinity"


class NumericalFailureError(EpigraphError):
    category = "numerical-failure"

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class UnknownViewError(EpigraphError, KeyError):
    category = "reference"

    def __init__(self, view_id):
        super().__init__(f"unknown view id {view_id!r}")
        self.view_id = view_id

    def __str__(self):
        return self.args[0]


class EmptyCloudError(EpigraphError):
    category = "empty-cloud"


class InsufficientAnchorsError(EpigraphError):
    category = "insufficient-anchors"


class DegenerateEdgeError(EpigraphError):
    category = "degenerate-edge"


class NonFiniteInputError(EpigraphError, ValueError):
    category = "non-finite"

    def __init__(self, name, index):
        super().__init__(f"non-finite value in {name} at index {tuple(int(i) for i in index)}")
        self.index = tuple(int(i) for i in index)


class ParseError(EpigraphError):
    category = "parse"

    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = str(path)
        self.line = line
        self.column = column


class SemanticError(EpigraphError):
    category = "semantic"


class ConfigError(EpigraphError):
    category = "config"


class ImageReadError(EpigraphError, OSError):
    category = "io"
