"""Gradient inversion laboratory.

Reconstructs private training images from the gradients a federated
client shares, using gradient matching plus image priors (total variation
and an autoencoder anomaly score).  See the README for the module map and
the command-line interface.
"""

__version__ = "0.1.0"
