"""Instruction-tuned retrieval of workflow components: corpus, datasets, encoder, indexes and evaluation."""

__version__ = "0.1.0"
