"""Critical-mass analysis of research-group quality versus size."""

__version__ = "0.1.0"
