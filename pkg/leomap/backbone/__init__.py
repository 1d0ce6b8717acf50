"""Backbone router identification, clustering and PoP graph inference."""
