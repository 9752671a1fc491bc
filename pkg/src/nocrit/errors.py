class EngineError(RuntimeError):
    """Construction or evaluation failure; ``stage`` names the build step."""

    def __init__(self, message: str, stage: str = "engine", witness=None):
        super().__init__(message)
        self.stage = stage
        self.witness = witness


class CoverBudgetExceeded(EngineError):
    def __init__(self, message, witness=None):
        super().__init__(message, stage="cover", witness=witness)


class DegenerateFrame(EngineError):
    def __init__(self, message):
        super().__init__(message, stage="cover")


class OutsideDomain(EngineError):
    def __init__(self, message, witness=None):
        super().__init__(message, stage="evaluate", witness=witness)


class ConvergenceFailure(EngineError):
    pass
