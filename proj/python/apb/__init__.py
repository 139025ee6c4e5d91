try:
    from ._apb import *  # noqa: F401,F403
except ImportError:  # in-tree builds place the extension next to the sources
    from _apb import *  # noqa: F401,F403
