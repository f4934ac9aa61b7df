"""Semi-automated warehouse stocktaking: scan ingestion, reconciliation,
route optimization, live monitoring, and a deterministic simulator."""

__version__ = "0.1.0"
