"""Discrimination of quantum processes: comb SDPs, bounds and channel models."""
