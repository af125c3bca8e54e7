"""Entry surfaces - command line."""
