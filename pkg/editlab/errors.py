"""Exception types raised by editlab

Contract violations are ``ValueError`` subclasses, failures of a computation that
was set up correctly are ``RuntimeError`` subclasses.  The command line turns every
one of them into a nonzero exit status.
"""


class DimensionError(ValueError):
    """operands with incompatible shapes"""


class ContractError(ValueError):
    """a documented precondition was violated"""


class EmptyLossError(ContractError):
    """loss requested over an all-false mask"""


class SequenceLengthError(ValueError):
    """token sequence longer than the model's maximum sequence length"""


class ConfigError(ValueError):
    """invalid or unknown configuration"""


class TrainingError(RuntimeError):
    """language model training diverged

    Parameters
    ----------
    msg: str
        description
    loss_trace: list(float)
        per-epoch losses up to the failure
    """

    def __init__(self, msg, loss_trace=None):
        super().__init__(msg)
        self.loss_trace = list(loss_trace) if loss_trace is not None else []


class EditError(RuntimeError):
    """an edit diverged, carries the per-step loss trace"""

    def __init__(self, msg, loss_trace=None):
        super().__init__(msg)
        self.loss_trace = list(loss_trace) if loss_trace is not None else []


class BenchmarkQualityError(RuntimeError):
    """benchmark filtering left nothing usable

    Parameters
    ----------
    msg: str
        description
    diagnostics: dict
        per-API counts of candidates, survivors and failure reasons
    """

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = dict(diagnostics) if diagnostics is not None else {}


class StaleHandleError(RuntimeError):
    """edit handle already rolled back or not the model's active edit"""


class ProvenanceError(RuntimeError):
    """stored artifact does not match the model or inputs it claims to derive from"""


class RollbackError(RuntimeError):
    """model parameters differ from their pre-edit state after rollback"""
