"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line front end uses
when the exception escapes a subcommand.
"""


class BeltramiError(Exception):
    exit_code = 1


class InputError(BeltramiError, ValueError):
    """Malformed or invalid input (bad grid, bad config, violated precondition)."""

    exit_code = 2


class InfeasibleError(BeltramiError):
    """A curve family or problem has no admissible representative."""

    exit_code = 3


class RouteNotEstablished(BeltramiError):
    """No solvability criterion could be established and force was not requested."""

    exit_code = 4


class NumericFailure(BeltramiError, ArithmeticError):
    """A numerical procedure failed (rank deficiency, non-convergence, degenerate Jacobian)."""

    exit_code = 5
