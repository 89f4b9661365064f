"""Single-threaded request loop over standard streams.

One reply line per non-blank input line, flushed immediately, requests
handled strictly in arrival order. The loop survives anything the peer
sends: unparseable bytes get a -32600 reply, unknown methods -32601, and a
handler exception becomes a -32000 reply instead of a crash. Only replies
ever touch stdout.
"""

from __future__ import annotations

import sys
import traceback

from .handlers import default_handlers
from .wire import (ERR_INTERNAL, ERR_METHOD_NOT_FOUND, WireError,
                   decode_message, encode_message, make_error, make_response,
                   validate_request)


def handle_line(line: bytes, handlers: dict) -> bytes:
    try:
        obj = decode_message(line)
    except WireError as exc:
        return encode_message(make_error(0, exc.code, str(exc)))

    # reuse the id for error correlation whenever it is usable
    req_id = obj.get("id")
    if not isinstance(req_id, int) or isinstance(req_id, bool) or req_id < 0:
        req_id = 0
    try:
        req_id, method, params = validate_request(obj)
    except WireError as exc:
        return encode_message(make_error(req_id, exc.code, str(exc)))

    fn = handlers.get(method)
    if fn is None:
        return encode_message(make_error(
            req_id, ERR_METHOD_NOT_FOUND, f"no handler registered for {method!r}"))
    try:
        result = fn(params)
    except Exception as exc:
        tb = traceback.format_exc(limit=5)
        return encode_message(make_error(
            req_id, ERR_INTERNAL, f"{type(exc).__name__}: {exc}\n{tb}"))
    return encode_message(make_response(req_id, result))


def serve(handlers=None, stdin=None, stdout=None) -> None:
    """Serve until the peer closes our stdin; never raises on bad input."""
    handlers = default_handlers() if handlers is None else handlers
    fin = sys.stdin.buffer if stdin is None else stdin
    fout = sys.stdout.buffer if stdout is None else stdout
    while True:
        line = fin.readline()
        if not line:
            return
        if not line.strip():
            continue
        try:
            reply = handle_line(line, handlers)
        except Exception as exc:      # belt and braces: the loop must live
            reply = encode_message(make_error(
                0, ERR_INTERNAL, f"unexpected server error: {exc}"))
        try:
            fout.write(reply)
            fout.flush()
        except (BrokenPipeError, OSError):
            return
