"""Template-guided news image captioning, end to end on a desk-scale budget."""

__version__ = "0.1.0"
