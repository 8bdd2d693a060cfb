class ActionFlowError(Exception):
    pass


class InvalidArgumentError(ActionFlowError, ValueError):
    pass


class ShapeError(ActionFlowError, ValueError):
    pass


class NumericalError(ActionFlowError, ArithmeticError):
    pass


class CheckpointError(ActionFlowError):
    pass
