"""Configuration handling for metamorphic MHE."""
