"""Domain types for plants, sets, weights and estimator results."""
