"""Zero-shot prompt tuning of masked language models for code pair tasks."""

__version__ = "0.1.0"
