"""Latent tree learning laboratory: SPINN variants, RL-SPINN, ST-Gumbel, and
the tree metrics used to analyze what they learn."""

__version__ = "0.1.0"
