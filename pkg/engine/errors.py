# engine/errors.py


class ContractViolation(ValueError):
    """An operand or call broke an operation's precondition (shapes, scalar output, tape state)."""


class NumericError(ArithmeticError):
    """A tensor value left the finite range."""


class CheckPreconditionError(RuntimeError):
    """The function handed to grad_check is not deterministic."""
