"""Utility functions and helpers for metamorphic MHE."""
