"""Unsupervised audio representations from recurrent sequence-to-sequence autoencoders."""
__version__ = "0.1.0"
