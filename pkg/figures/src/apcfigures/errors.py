"""Error types for the figure pipeline.

Both are ValueError subclasses so callers that only care about "bad
input" can catch one type; the CLI maps both to exit code 2.
"""


class SchemaError(ValueError):
    """An input file does not match its documented schema.

    The message always names the file and the offending field, column,
    or row.
    """


class SpecError(ValueError):
    """A figure spec is invalid (unknown kind, bad style key, ...)."""
