"""One-step-diffusion generative image codec with an FSQ hyperprior."""

__version__ = "0.1.0"
