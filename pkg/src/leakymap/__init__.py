"""Numerics for the quadratic map with holes: admissibility checks, the Markov
extension, conditionally invariant densities and escape rates."""

__version__ = "0.1.0"
