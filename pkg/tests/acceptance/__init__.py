"""Acceptance tests for Metamorphic MHE."""
