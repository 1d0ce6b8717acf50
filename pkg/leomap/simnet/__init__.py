"""Deterministic simulator of the operator network, used as ground truth."""
