"""Exception hierarchy shared across polyroute."""


class PolyrouteError(Exception):
    """Base class for all library errors."""


class InvalidConfiguration(PolyrouteError, ValueError):
    pass


class InvalidInput(PolyrouteError, ValueError):
    pass


class IncompleteScores(PolyrouteError, ValueError):
    """A dense-only consumer received a ScoreTensor with unknown entries."""


# lang-similarity
class UnknownLanguage(PolyrouteError, KeyError):
    pass


class IneligibleLanguage(PolyrouteError, ValueError):
    pass


# backends
class BackendError(PolyrouteError):
    pass


class BackendUnavailable(BackendError):
    pass


class RateLimited(BackendError):
    pass


class ProtocolError(BackendError):
    pass


class InvalidJob(PolyrouteError, ValueError):
    pass


# retrieval
class IndexMismatch(PolyrouteError, ValueError):
    pass


# strategies
class StrategyFailed(PolyrouteError):
    def __init__(self, strategy, reason):
        super().__init__(f"{strategy}: {reason}")
        self.strategy = strategy
        self.reason = reason


class StrategyInapplicable(PolyrouteError):
    def __init__(self, strategy, reason):
        super().__init__(f"{strategy} inapplicable: {reason}")
        self.strategy = strategy
        self.reason = reason


# eval
class JudgeProtocolError(PolyrouteError, ValueError):
    def __init__(self, reply):
        super().__init__(f"unparseable judge reply: {reply!r}")
        self.reply = reply


# selector
class ArchitectureError(PolyrouteError, ValueError):
    pass


class TrainingDiverged(PolyrouteError, FloatingPointError):
    pass


# harness
class ParseError(PolyrouteError, ValueError):
    def __init__(self, message, locus=None):
        super().__init__(f"{locus}: {message}" if locus is not None else message)
        self.locus = locus
