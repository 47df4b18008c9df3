"""Real-time surgical gesture recognition and gesture/trajectory prediction."""

__version__ = "0.1.0"
