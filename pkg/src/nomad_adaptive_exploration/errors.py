class ExplorationError(Exception):
    """Base class for every error raised by this package."""


class ModulationError(ExplorationError, ValueError):
    pass


class PolicyError(ExplorationError, ValueError):
    pass


class BanditError(ExplorationError, ValueError):
    pass


class MDPError(ExplorationError, ValueError):
    pass


class LayoutError(MDPError):
    pass


class LearnerError(ExplorationError, ValueError):
    pass


class ConfigError(ExplorationError, ValueError):
    pass


class MetricsError(ExplorationError, ValueError):
    pass
