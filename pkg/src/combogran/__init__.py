"""Combination-granularity workbench for multimodal GUI-agent corpora."""

__version__ = "0.1.0"
