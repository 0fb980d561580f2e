"""Adaptive alarm-threshold engine: ingestion, labels, PCTN and iTransformer models, evaluation."""

__version__ = "0.1.0"
