"""Conservative lattice-gas droplet dynamics on the 2D torus.

Event-driven simulation of the spin-exchange dynamics, exact
zero-temperature limit rates for the droplet's shape chain, and the
estimators (diffusion scale, quadratic variation, confinement, capacities)
that tie the two together.
"""

__version__ = "0.1.0"
