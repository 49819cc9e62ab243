class ExportConfigError(ValueError):
    """Bad arguments, unknown model ids, unloadable checkpoints."""


class ExportDataError(ValueError):
    """Unreadable or inconsistent input files."""
