"""
Bucket Brigade - Error Types
============================
Exception hierarchy shared by the simulator, the analysis modules and the CLI.
"""


class BrigadeError(Exception):
    """Base class for every error raised by this project"""


class ConfigError(BrigadeError, ValueError):
    """Invalid configuration, parameters or command-line input"""


class StateError(BrigadeError, ValueError):
    """A state outside the ordered simplex, or a violated reset precondition"""


class DegenerateParams(BrigadeError, ValueError):
    """Derived quantity undefined for the given (r1, r2)"""


class CertificationError(BrigadeError):
    """A claimed cycle does not replay exactly"""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DenominatorCapExceeded(BrigadeError, ArithmeticError):
    """Exact arithmetic produced a denominator larger than the configured cap"""

    def __init__(self, bits, cap):
        super().__init__(f"denominator grew to {bits} bits (cap {cap})")
        self.bits = bits
        self.cap = cap
