"""Semi-parametric estimation of finite translation mixtures with
dependent regimes: contrast-based parametric estimation plus penalized
sieve density estimation."""

__version__ = "0.1.0"
