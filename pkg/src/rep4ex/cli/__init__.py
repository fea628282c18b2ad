"""Command-line interface and experiment orchestration."""
