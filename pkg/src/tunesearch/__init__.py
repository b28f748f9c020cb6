"""Music search engine: text indexes, melodic contour search, scrobble-based ranking."""

__version__ = "0.1.0"
