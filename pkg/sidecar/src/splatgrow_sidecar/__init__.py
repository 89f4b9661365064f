"""Standalone model sidecar speaking the splatgrow wire protocol over stdio.

This package deliberately does not import the engine: the newline-delimited
JSON protocol is the only contract between the two sides, so the codec here
is an independent implementation of the same wire format.
"""

from .handlers import default_handlers
from .server import serve
from .wire import (ERR_INTERNAL, ERR_INVALID_REQUEST, ERR_METHOD_NOT_FOUND,
                   METHODS, WireError, decode_message, decode_tensor,
                   encode_message, encode_tensor)

__all__ = [
    "METHODS", "WireError", "ERR_INVALID_REQUEST", "ERR_METHOD_NOT_FOUND",
    "ERR_INTERNAL", "encode_message", "decode_message", "encode_tensor",
    "decode_tensor", "default_handlers", "serve",
]

__version__ = "0.1.0"
