"""Identifiable representations from interventions, and what they buy you.

The library learns an encoder whose output is an affine function of the
hidden latent state by penalizing an autoencoder with a kernelized
conditional moment restriction, then uses the encoder's action-regression
residuals as control variables to estimate mean outcomes under actions far
outside the training support.
"""

__version__ = "0.1.0"
