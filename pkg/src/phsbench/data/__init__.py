"""Bundled data files: registry, emoji table, published result grids."""
