"""Natural adversarial examples for black-box classifiers.

Train a WGAN-GP generator and a matching inverter on a dataset, then search
the latent space for the closest generated instance that a target classifier
labels differently. The latent displacement needed to flip each classifier
doubles as a robustness measure.
"""

__version__ = "0.1.0"
