"""
Test package for the stochastic Navier-Stokes solver.
"""
