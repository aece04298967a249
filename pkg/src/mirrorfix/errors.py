"""Exception hierarchy.

Every error raised on bad *data* derives from :class:`DataError`; the CLI maps
those to exit code 2. Programming / usage errors stay as builtin exceptions.
"""


class DataError(ValueError):
    pass


class DegenerateGeometry(DataError):
    pass


class SingularNormalMatrix(DataError):
    pass


class Underdetermined(DataError):
    pass


class NonConvergence(DataError):
    pass


class NotConverged(DataError):
    pass


class ZeroBaseVector(DataError):
    pass


class NoPairs(DataError):
    pass


class CarrierUnlocked(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class InsufficientSpan(DataError):
    pass


class EmptyInput(DataError):
    pass


class InvalidScenario(DataError):
    pass


class JoinMismatch(DataError):
    def __init__(self, epoch_ms: int, side: str):
        super().__init__(f"epoch {epoch_ms} missing from {side}")
        self.epoch_ms = epoch_ms


# rfdesign
class SingularDenominator(DataError):
    pass


class NonPositiveInput(DataError):
    pass


class InductiveEquivalent(DataError):
    def __init__(self, susceptance: float):
        super().__init__(
            f"net susceptance {susceptance:.6g} S is not capacitive at this frequency"
        )
        self.susceptance = susceptance


class RankDeficient(DataError):
    pass


class ZeroSlope(DataError):
    pass


class AboveCutoff(DataError):
    pass


class NoNegativeResistanceRegion(DataError):
    pass
