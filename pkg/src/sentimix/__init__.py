"""Sentiment classifiers over IMDB reviews and their geometric-mean ensemble."""

__version__ = "0.1.0"
