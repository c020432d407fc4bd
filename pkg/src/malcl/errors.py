"""Exception hierarchy shared across the package."""


class MalclError(Exception):
    pass


class FormatError(MalclError, ValueError):
    """Input file is malformed (ragged rows, empty file, bad magic)."""


class SchemaError(MalclError, ValueError):
    """Input is well-formed but violates the expected schema."""


class ConfigurationError(MalclError, ValueError):
    """Invalid combination of settings."""


class NonFiniteLossError(MalclError, FloatingPointError):
    def __init__(self, value, context=None):
        self.value = value
        self.context = dict(context or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"non-finite loss {value!r}" + (f" ({detail})" if detail else ""))
