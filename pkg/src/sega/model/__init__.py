"""Feature encoder, relational graph transformer and objective heads."""
