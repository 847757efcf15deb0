"""Decay of localized entropy solutions of multidimensional conservation laws.

Flux analysis, lattice geometry, sliding-window norms, periodic envelopes and
monotone finite volume schemes, plus an experiment driver.
"""

__version__ = "0.1.0"
