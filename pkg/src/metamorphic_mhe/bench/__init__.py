"""Simulation, scenarios and Monte Carlo experiments."""
