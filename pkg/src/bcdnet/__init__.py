"""Batch-coherence part-aware re-identification at toy scale."""

__version__ = "0.1.0"
