"""
Provide hierarchy of exceptions for QWalkLab
"""


class QWalkLabException(Exception):
    """
    Root exception for custom hierarchy of exceptions
    with QWalkLab.
    """


class ParameterException(QWalkLabException):
    """
    Exception for invalid walk parameters, for example a
    probability triple which is negative or does not sum to one.
    """


class PreconditionException(QWalkLabException):
    """
    Exception for operations called outside of their domain.
    """


class ClassificationException(QWalkLabException):
    """
    Exception for recurrence classification challenges.
    """


class SpectralException(QWalkLabException):
    """
    Exception for eigenvalue or eigenvector challenges.
    """


class NumericalLiftException(SpectralException):
    """
    Exception for lifted eigenvectors whose residual
    exceeds the accepted threshold.
    """


class ConfigException(QWalkLabException):
    """
    Exception for scenario configuration schema challenges.
    """
