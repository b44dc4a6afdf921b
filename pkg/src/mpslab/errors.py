"""Exception hierarchy; the CLI maps each family to an exit code."""


class MpsError(Exception):
    """Base class for all errors raised by mpslab."""


class DataError(MpsError, ValueError):
    """Bad inputs: shapes, files, labels, degenerate samples."""


class BackendError(MpsError, RuntimeError):
    """A model backend failed to load or run."""

    def __init__(self, message, model_id=None, path=None):
        detail = message
        if model_id is not None:
            detail += f" [model_id={model_id}]"
        if path is not None:
            detail += f" [path={path}]"
        super().__init__(detail)
        self.model_id = model_id
        self.path = path


class BudgetExhausted(MpsError):
    """Raised internally when an oracle-call budget runs out mid-table."""
