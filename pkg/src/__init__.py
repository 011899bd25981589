"""
Two-stage scene graph generation.

A generative graph transformer samples an unlabeled interaction graph over
detected entities; a transformer relation predictor then labels the
highest-prior edges with predicates.
"""
