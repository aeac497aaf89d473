class ExportError(ValueError):
    """Unrecoverable export failure (missing weights, bad job spec, ...)."""
