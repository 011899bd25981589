"""Training loops for both models."""
