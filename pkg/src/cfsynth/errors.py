"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CfSynthError(Exception):
    exit_code = 2
    kind = "error"


class InvalidParameter(CfSynthError, ValueError):
    kind = "invalid-parameter"


class InvalidData(CfSynthError, ValueError):
    kind = "invalid-data"


class InvalidState(CfSynthError, RuntimeError):
    kind = "invalid-state"


class InvalidArtifact(CfSynthError, ValueError):
    kind = "invalid-artifact"


class PrivacyBudgetError(CfSynthError):
    exit_code = 3
    kind = "privacy-budget"


class NumericFailure(CfSynthError, FloatingPointError):
    exit_code = 4
    kind = "numeric-failure"
