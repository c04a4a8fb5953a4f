"""Exception hierarchy.

Every error carries a short machine-readable ``category`` which the CLI
prints on failure.
"""


class RewalignError(Exception):
    category = "error"


class InvalidInputError(RewalignError, ValueError):
    category = "invalid-input"


class NoRootError(RewalignError, ArithmeticError):
    category = "no-root"


class DegenerateColumnError(RewalignError, ArithmeticError):
    category = "degenerate-column"


class DegenerateModelError(RewalignError, ArithmeticError):
    category = "degenerate-model"


class EpisodeFinishedError(RewalignError, RuntimeError):
    category = "episode-finished"


class GenerationFailureError(RewalignError, RuntimeError):
    category = "generation-failure"
