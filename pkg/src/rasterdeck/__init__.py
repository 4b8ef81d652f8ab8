"""rasterdeck: reconstruct infographic raster images as editable slide decks."""

__version__ = "0.1.0"
