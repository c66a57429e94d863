"""Bridge between Hugging Face causal LMs and the rom engine."""

__version__ = "0.1.0"
