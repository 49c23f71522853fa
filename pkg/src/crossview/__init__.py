"""Cross-view prompt-tuned video recognition on a synthetic multi-view
hand-object world."""

__version__ = "0.1.0"
