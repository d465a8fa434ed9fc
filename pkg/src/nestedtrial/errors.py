"""Exception hierarchy.

Every exception carries a stable ``code`` string and an integer ``exit_code``
used by the command-line front end. Both are part of the public contract and
must not change between versions.
"""


class NestedTrialError(Exception):
    code = "error"
    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


# data
class MissingColumn(NestedTrialError):
    code = "missing_column"
    exit_code = 10


class ColumnTypeError(NestedTrialError, TypeError):
    code = "column_type"
    exit_code = 11


class PatternViolation(NestedTrialError):
    code = "pattern_violation"
    exit_code = 12


class InfeasibleDesign(NestedTrialError):
    code = "infeasible_design"
    exit_code = 13


class PreconditionError(NestedTrialError, ValueError):
    code = "precondition"
    exit_code = 14


# glm
class RankDeficient(NestedTrialError):
    code = "rank_deficient"
    exit_code = 20


class Separation(NestedTrialError):
    code = "separation"
    exit_code = 21


class NotConverged(NestedTrialError):
    code = "not_converged"
    exit_code = 22


class MissingDesignColumn(NestedTrialError):
    code = "missing_design_column"
    exit_code = 23


# nuisance / estimator
class DegenerateSampling(NestedTrialError):
    code = "degenerate_sampling"
    exit_code = 30


class EmptyStratum(NestedTrialError):
    code = "empty_stratum"
    exit_code = 31


class EmptyArm(NestedTrialError):
    code = "empty_arm"
    exit_code = 32


class DegenerateWeight(NestedTrialError):
    code = "degenerate_weight"
    exit_code = 33


class NotCensus(NestedTrialError):
    code = "not_census"
    exit_code = 34


class MismatchedData(NestedTrialError):
    code = "mismatched_data"
    exit_code = 35


class TooManyFailures(NestedTrialError):
    code = "too_many_failures"
    exit_code = 36


# sim
class BracketFailure(NestedTrialError):
    code = "bracket_failure"
    exit_code = 40


class ConfigError(NestedTrialError):
    code = "config"
    exit_code = 2


class IOFailure(NestedTrialError):
    code = "io"
    exit_code = 3
