"""Active user discovery, PoP association and statistics."""
