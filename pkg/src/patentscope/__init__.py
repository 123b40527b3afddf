"""Multi-agent patent analysis: preprocessing, five-role LLM team, report output, metrics."""

__version__ = "0.1.0"
