"""Base exception for data errors raised anywhere in flonav.

Each module defines its own subclasses next to the code that raises them. The command line maps every
:class:`FlonavError` to exit status 2.

"""


class FlonavError(RuntimeError):
    pass
