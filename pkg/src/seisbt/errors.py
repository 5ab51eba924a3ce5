"""Exception hierarchy shared by every module."""


class SeisBTError(Exception):
    """Base class for toolkit errors."""


class ConfigError(SeisBTError, ValueError):
    """An invalid configuration value. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class LoadError(SeisBTError, ValueError):
    """Catalog file failed validation."""

    def __init__(self, message: str, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = (", ".join(where) + ": ") if where else ""
        super().__init__(prefix + message)


class FormatError(SeisBTError, ValueError):
    """Malformed binary file (waveform or model bundle)."""


class PartitionError(SeisBTError, ValueError):
    pass


class DspError(SeisBTError, ValueError):
    pass


class ShapeError(SeisBTError, ValueError):
    """Tensor shape does not match what a layer expects."""

    def __init__(self, layer: str, message: str):
        self.layer = layer
        super().__init__(f"layer {layer!r}: {message}")


class NumericError(SeisBTError, FloatingPointError):
    pass


class UsageError(SeisBTError, ValueError):
    pass


class AnalysisError(SeisBTError, ValueError):
    pass
