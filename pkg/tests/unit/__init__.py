"""Unit tests for Metamorphic MHE."""
