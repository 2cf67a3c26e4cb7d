class RxnVAEError(Exception):
    """Base class for every error raised by the package."""


# --- numerics ---

class ShapeError(RxnVAEError, ValueError):
    pass


class NonFiniteError(RxnVAEError, ArithmeticError):
    pass


class TapeError(RxnVAEError, RuntimeError):
    pass


# --- trees / chemistry ---

class StructureError(RxnVAEError, ValueError):
    """A tree violates its structural invariants."""

    def __init__(self, message, node_id=None):
        self.node_id = node_id
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)


class MalformedMolecule(RxnVAEError, ValueError):
    pass


class ChemistryError(RxnVAEError):
    pass


class UnknownTemplate(ChemistryError, KeyError):
    pass


class ArityMismatch(ChemistryError, ValueError):
    def __init__(self, template_id, expected, got):
        self.template_id = template_id
        self.expected = expected
        self.got = got
        super().__init__(f"template {template_id} takes {expected} reactants, got {got}")


class PreconditionFailed(ChemistryError):
    """A reactant does not satisfy the template's precondition."""

    def __init__(self, reactant_index, reason=""):
        self.reactant_index = reactant_index
        self.reason = reason
        super().__init__(f"PreconditionFailed({reactant_index}){': ' + reason if reason else ''}")


class InfeasibleConfig(RxnVAEError, ValueError):
    pass


class SchemaError(RxnVAEError, ValueError):
    """A file does not match its schema. Carries the location of the problem."""

    def __init__(self, message, path=None, field=None):
        self.path = path
        self.field = field
        where = ""
        if path is not None:
            where += f"{path}: "
        if field is not None:
            where += f"[{field}] "
        super().__init__(where + message)


class ConfigError(RxnVAEError, ValueError):
    pass


# --- oracle ---

class OracleError(RxnVAEError):
    pass


class OracleTransportError(OracleError, ConnectionError):
    pass


class OracleTimeout(OracleError, TimeoutError):
    pass


class OracleProtocolError(OracleError, ValueError):
    pass


# --- training / optimization ---

class TrainingDiverged(RxnVAEError, ArithmeticError):
    def __init__(self, message, example_index=None):
        self.example_index = example_index
        super().__init__(message)


class GPError(RxnVAEError, ArithmeticError):
    pass


class EmptyDataset(RxnVAEError, ValueError):
    pass


VALIDATION_ERRORS = (SchemaError, StructureError, ConfigError, MalformedMolecule, InfeasibleConfig, EmptyDataset)
