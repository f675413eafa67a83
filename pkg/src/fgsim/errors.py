class ValidationError(ValueError):
    """A contract violation: bad shapes, out-of-range parameters, malformed
    configuration. The CLI maps these to exit code 1 (I/O problems raise
    OSError subclasses and map to exit code 2)."""
