"""Exception types shared across the package."""


class ConfigurationError(Exception):
    """A config names something the artifact cannot build or run."""


class UnsupportedConfigurationError(ConfigurationError):
    """A valid-looking combination that is deliberately rejected (e.g. the
    combined OOD score on a vector-quantized nuisance channel)."""


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss term goes non-finite during training; carries the
    offending term name."""

    def __init__(self, term: str, step: int):
        super().__init__(f"non-finite loss term {term!r} at step {step}")
        self.term = term
        self.step = step
