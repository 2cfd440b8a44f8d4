"""Exception hierarchy. Everything raised on purpose derives from TdsvError."""


class TdsvError(Exception):
    """Base class for all library errors."""


# --- audio / file formats ---------------------------------------------------

class NotAWavError(TdsvError):
    pass


class UnsupportedEncodingError(TdsvError):
    pass


class UnsupportedChannelsError(TdsvError):
    pass


class UnsupportedRateError(TdsvError):
    pass


class BadMagicError(TdsvError):
    pass


class TruncatedFileError(TdsvError):
    pass


class DimensionOverflowError(TdsvError):
    pass


class VersionMismatchError(TdsvError):
    pass


class CorruptPayloadError(TdsvError):
    pass


# --- corpus -----------------------------------------------------------------

class TrialParseError(TdsvError):
    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InvalidSpecError(TdsvError):
    pass


# --- features ---------------------------------------------------------------

class UtteranceTooShortError(TdsvError):
    pass


class FrameCountMismatchError(TdsvError):
    pass


# --- models -----------------------------------------------------------------

class DimensionMismatchError(TdsvError):
    pass


class ModelShapeMismatchError(TdsvError):
    pass


class InsufficientDataError(TdsvError):
    pass


# --- hmm --------------------------------------------------------------------

class PhoneMissingFromCorpusError(TdsvError):
    pass


class UnknownPhoneError(TdsvError):
    pass


class EmptyTranscriptError(TdsvError):
    pass


class NoValidPathError(TdsvError):
    pass


# --- ivector ----------------------------------------------------------------

class LayoutMismatchError(TdsvError):
    pass


class NonFiniteStatsError(TdsvError):
    pass


class InsufficientUtterancesError(TdsvError):
    pass


class EmptyEnrollmentError(TdsvError):
    pass


class ZeroVectorError(TdsvError):
    pass


# --- evaluation -------------------------------------------------------------

class MissingReferenceError(TdsvError):
    """A trial references models or utterances that cannot be resolved."""

    def __init__(self, missing_models=(), missing_utterances=()):
        self.missing_models = sorted(set(missing_models))
        self.missing_utterances = sorted(set(missing_utterances))
        parts = []
        if self.missing_models:
            parts.append("missing models: " + ", ".join(self.missing_models))
        if self.missing_utterances:
            parts.append("missing utterances: " + ", ".join(self.missing_utterances))
        super().__init__("; ".join(parts) or "missing references")


class EmptyClassError(TdsvError):
    pass


# --- configuration ----------------------------------------------------------

class ConfigError(TdsvError):
    pass


class UsageError(TdsvError):
    pass
