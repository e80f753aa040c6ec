"""Exception hierarchy shared by every gllim module."""


class GLLiMError(Exception):
    """Base class; ``category`` is what the CLI reports."""

    category = "gllim-error"


class ShapeError(GLLiMError, ValueError):
    category = "shape"


class InvalidParametersError(GLLiMError, ValueError):
    category = "invalid-parameters"


class IllConditionedError(GLLiMError):
    category = "ill-conditioned-parameters"

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class RankDeficiencyError(GLLiMError):
    category = "rank-deficiency"

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class DegenerateQueryError(GLLiMError):
    category = "degenerate-query"


class FitFailure(GLLiMError):
    category = "fit-failure"


class NumericalFailure(GLLiMError):
    category = "numerical-failure"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedConfiguration(GLLiMError, ValueError):
    category = "unsupported"


class ParseError(GLLiMError, ValueError):
    category = "parse"

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line
