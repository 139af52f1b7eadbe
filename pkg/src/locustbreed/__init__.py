"""Desert-locust breeding-ground prediction pipeline."""

__version__ = "0.1.0"
