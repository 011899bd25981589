"""Scene synthesis: world, generator, detector simulation and dataset files."""
