"""PDE-regularized variational image segmentation.

Reaction-diffusion and phase-field priors on a continuous segmentation field,
data-fidelity losses, a direct variational solver, a small trainable
encoder-decoder, boundary-aware metrics, synthetic data and an experiment
harness.
"""

__version__ = "0.1.0"
