# utils/errors.py

class ConfigError(ValueError):
    """An experiment config file is missing, malformed or violates its schema."""


class RecordFormatError(ValueError):
    pass
