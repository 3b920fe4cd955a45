"""Numerical laboratory for random conductance models on supercritical
percolation clusters: renormalization partitions of good cubes, cluster
solvers for correctors and Green's functions, and the scaling experiments
built on them."""

__version__ = "0.1.0"
