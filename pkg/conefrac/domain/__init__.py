"""Domain layer - run configuration models."""
