class DomainError(ValueError):
    """Input outside the domain an operation is defined on."""


class DegenerateInputError(DomainError):
    """Input is well-formed but geometrically or numerically degenerate."""


class NumericalDomainError(DomainError):
    """Computation would be numerically meaningless (e.g. near-singular matrix)."""
