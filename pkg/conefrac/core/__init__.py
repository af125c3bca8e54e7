"""Core system components - config, logging, metrics, errors."""
