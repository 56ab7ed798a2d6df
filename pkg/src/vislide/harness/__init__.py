"""Configuration, evaluation metrics, persistence and the command line."""
