"""Exception hierarchy.

Everything raised on bad input data derives from :class:`DataError`, which the
CLI maps to exit code 2.
"""


class DataError(Exception):
    """Input data violates a documented contract."""


# knowledge base
class KBError(DataError):
    pass


class EmptyKB(KBError):
    pass


class InvalidCutoffs(KBError):
    pass


class NonPositiveParam(KBError):
    pass


class DuplicateConcept(KBError):
    pass


class UnknownConcept(KBError):
    pass


# ingestion
class SchemaError(DataError):
    pass


# abstraction
class DegenerateSpan(DataError):
    pass


class OutOfSpan(DataError):
    pass


# encoding
class AgeBelowAdult(DataError):
    pass


# cohort
class TooFewPatients(DataError):
    pass


# evaluation
class SingleClass(DataError):
    pass


class NoPositives(DataError):
    pass


class EmptyChunks(DataError):
    pass


# baseline
class SingleClassValidation(SingleClass):
    pass


class DimensionMismatch(DataError):
    pass
