"""Configuration, data ingestion, metrics, experiment drivers and the CLI."""
