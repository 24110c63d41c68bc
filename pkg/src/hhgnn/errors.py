"""Exception types shared across the package.

Each error carries the process exit code the CLI maps it to.
"""


class HHGNNError(Exception):
    exit_code = 1


class ParseError(HHGNNError):
    exit_code = 3

    def __init__(self, line: int, column: str, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column!r}: {reason}")


class SchemaMismatch(HHGNNError):
    exit_code = 3


class ShapeMismatch(HHGNNError, ValueError):
    pass


class IsolatedNode(HHGNNError, ValueError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"node {node} has zero degree; convolution operator undefined")


class EmptyGraph(HHGNNError):
    exit_code = 4


class NonFinite(HHGNNError, FloatingPointError):
    exit_code = 5


class GradcheckFailed(HHGNNError):
    exit_code = 6


class TooFewRows(HHGNNError, ValueError):
    exit_code = 3


class LengthMismatch(HHGNNError, ValueError):
    pass
