"""Exception taxonomy.

Every error carries a short machine-readable ``code`` (e.g. ``"patch-exit"``)
so the CLI can map failures to exit codes without string matching.
"""


class SubmaslovError(Exception):
    code = "error"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class InvalidDimension(SubmaslovError):
    code = "invalid-dimension"


class InvalidLagrangian(SubmaslovError):
    code = "invalid-lagrangian"


class InvalidChart(SubmaslovError):
    code = "invalid-chart"


class ChartDomainError(SubmaslovError):
    code = "chart-domain-violation"


class PartitionFailure(SubmaslovError):
    code = "partition-failure"

    def __init__(self, message="", t_start=None, t_end=None):
        super().__init__(message, t_start=t_start, t_end=t_end)
        self.t_start = t_start
        self.t_end = t_end


class SplitInapplicable(SubmaslovError):
    code = "split-inapplicable"


class InvalidSymplectomorphism(SubmaslovError):
    code = "invalid-symplectomorphism"


class ResolutionError(SubmaslovError):
    code = "resolution-error"


class DegenerateMetric(SubmaslovError):
    code = "degenerate-metric"


class PatchExit(SubmaslovError):
    code = "patch-exit"

    def __init__(self, message="", t=None):
        super().__init__(message, t=t)
        self.t = t


class StiffnessFailure(SubmaslovError):
    code = "stiffness-failure"


class IntegrationFailure(SubmaslovError):
    code = "integration-failure"


class InvalidFrame(SubmaslovError):
    code = "invalid-frame"


class SubmersionError(SubmaslovError):
    code = "invalid-submersion"


class InvalidArgument(SubmaslovError):
    code = "invalid-argument"


class IncompatibleSeed(SubmaslovError):
    code = "incompatible-seed"


class InvalidBoundaryData(SubmaslovError):
    code = "invalid-boundary-data"


class InvalidField(SubmaslovError):
    code = "invalid-field"


class InvalidStationaryData(SubmaslovError):
    code = "invalid-stationary-data"


class InvalidKKData(SubmaslovError):
    code = "invalid-kk-data"


class ConfigError(SubmaslovError):
    """Problem in a run configuration; ``key`` is the dotted key path."""

    code = "config-error"

    def __init__(self, message="", key=None, line=None, column=None):
        super().__init__(message, key=key, line=line, column=column)
        self.key = key
        self.line = line
        self.column = column

    def __str__(self):
        where = []
        if self.key:
            where.append(self.key)
        if self.line is not None:
            where.append(f"line {self.line}, column {self.column or 1}")
        prefix = f"{self.code} [{'; '.join(where)}]" if where else self.code
        return f"{prefix}: {Exception.__str__(self)}"


# numerical failures map to CLI exit status 3
NUMERICAL_ERRORS = (
    PartitionFailure,
    ResolutionError,
    StiffnessFailure,
    IntegrationFailure,
    DegenerateMetric,
)
