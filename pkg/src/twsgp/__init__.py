"""Learning term-weighting schemes for bag-of-words classification by genetic programming."""

__version__ = "0.1.0"
