"""Graph generative transformer, edge ranking and the predicate classifier."""
