"""Exception types shared across the engine.

Three broad families, which the CLI maps to exit codes: ConfigError (usage,
exit 1), DataError (bad or inconsistent input data, exit 2), and EngineError
(runtime failures, exit 3). Everything below derives from one of these.
"""


class MarketRippleError(Exception):
    """Base class for all engine errors."""


class ConfigError(MarketRippleError):
    """Invalid configuration or command usage."""


class DataError(MarketRippleError):
    """Input data violates a format or consistency requirement."""


class EngineError(MarketRippleError):
    """Runtime failure not attributable to user input."""


# --- firm graph ---

class DegenerateProfile(DataError):
    """Patent-code profile has fewer than two codes or zero variance."""


class MixedMonth(DataError):
    """Edge records for one snapshot span more than one month."""


class BadConfig(ConfigError):
    """Layer weights or other construction options are invalid."""


class UnknownFirm(DataError):
    """Referenced firm is not part of the snapshot."""


class EmptySeries(DataError):
    """Operation requires at least one snapshot."""


# --- asset pricing ---

class InsufficientHistory(DataError):
    """Too few overlapping observations in the estimation window."""


class DegenerateMarket(DataError):
    """Market excess returns have zero variance over the window."""


class MissingFactor(DataError):
    """Factor column required by the pricing model is absent."""


# --- propagation ---

class NoSeedInGraph(DataError):
    """None of an event's company codes resolve in the snapshot."""


class ClientDead(EngineError):
    """External propagator process is gone; the batch cannot continue."""


# --- alignment ---

class ZeroVector(DataError):
    """Shock or residual vector has zero norm; reward is undefined."""


class EmptyStream(DataError):
    """Alignment requires at least one event."""


# --- evaluation ---

class SingularDesign(DataError):
    """Design matrix is rank deficient."""


class DegenerateCrossSection(DataError):
    """Cross-sectional residual volatility is zero."""


class TooFewObservations(DataError):
    """Each comparison group needs at least two observations."""


# --- portfolio ---

class EmptyUniverse(DataError):
    """Weighting requires at least one asset."""


class ZeroVolatility(DataError):
    """Inverse-volatility weights are undefined for zero volatility."""


class BadCovariance(DataError):
    """Covariance matrix is not symmetric or has mismatched shape."""


class EmptySchedule(DataError):
    """Backtest requires at least one scheduled day."""


# --- synthetic market ---

class InfeasibleConfig(ConfigError):
    """Sparsity bounds cannot support the requested market."""
