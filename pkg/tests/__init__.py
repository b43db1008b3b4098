"""Test package for Metamorphic MHE."""
