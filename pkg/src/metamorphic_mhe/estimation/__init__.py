"""Numerical estimation modules."""
