"""Probing contract, batch orchestration and adapters."""
