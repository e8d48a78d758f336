"""Named-entity recognition and lemmatization for Polish, Czech and Russian."""

__version__ = "0.1.0"
