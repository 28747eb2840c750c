"""Audio-visual codec language model for video dubbing at desk scale."""
__version__ = "0.1.0"
