from enum import IntEnum


class NodeKind(IntEnum):
    MOLECULE = 0
    TEMPLATE = 1


class ExecStatus(IntEnum):
    VALID = 0
    INVALID = 1


class ExitCode(IntEnum):
    OK = 0
    VALIDATION_ERROR = 1
    RUNTIME_ERROR = 2


# Reaction-tree label of a molecule that is still to be synthesized.
EXPAND_LABEL = -1
