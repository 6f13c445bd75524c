"""Exception types raised across the package."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class BracketError(ValueError):
    """Root bracket does not contain a sign change."""


class InfeasibleError(ValueError):
    """No allocation satisfies the constraints."""


class ModulusError(ValueError):
    """Phase-shift vector is not unit modulus."""


class ConfigError(ValueError):
    """Invalid experiment configuration.

    ``diagnostics`` holds one human-readable line per problem found.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
