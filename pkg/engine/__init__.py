# engine/__init__.py
from .errors import CheckPreconditionError, ContractViolation, NumericError
from .tensor import DTYPE, Parameter, Tape, Tensor, active_tape, as_tensor, backward, zero_grad
from . import ops
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "CheckPreconditionError", "ContractViolation", "NumericError",
    "DTYPE", "Parameter", "Tape", "Tensor", "active_tape", "as_tensor", "backward", "zero_grad",
    "ops", "GradCheckReport", "grad_check",
]
