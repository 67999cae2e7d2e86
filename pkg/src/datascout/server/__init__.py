"""HTTP service and CLI exposing the pipeline."""
