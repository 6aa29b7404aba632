"""Numerical laboratory for supersymmetric Witten, Kramers-Fokker-Planck and
oscillator-chain operators: low-lying spectra, metastable splitting, return to
equilibrium, stochastic cross-checks and dynamical hypothesis checks."""

__version__ = "0.1.0"
