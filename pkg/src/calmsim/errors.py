"""Exception hierarchy shared across the package."""


class CalmsimError(Exception):
    pass


class LatticeTypeError(CalmsimError):
    """Merge attempted between values of different lattice types."""


class ThresholdMismatchError(LatticeTypeError):
    """Threshold sets with different thresholds cannot be merged."""


class LatticeLawError(CalmsimError):
    """A candidate merge function violates the ACI laws."""


class StratificationError(CalmsimError):
    """An instantaneous rule feeds its own sources within a single tick."""

    def __init__(self, cycle):
        self.cycle = tuple(cycle)
        super().__init__(
            "instantaneous rule cycle %s; defer one edge to the next tick"
            % " -> ".join(self.cycle)
        )


class DivergenceError(CalmsimError):
    """Evaluation failed to reach a fixed point within the iteration cap."""


class UnknownWorkerError(CalmsimError):
    pass
