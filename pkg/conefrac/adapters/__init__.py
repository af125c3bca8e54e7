"""Infrastructure adapters - output files."""
