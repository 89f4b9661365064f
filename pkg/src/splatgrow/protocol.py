"""Wire protocol for the model sidecar: newline-delimited JSON over stdio.

Requests look like {"id": u64, "method": ..., "params": {...}} and get either
{"id", "result"} or {"id", "error": {"code", "message"}} back. Tensors cross
the wire as {"shape": [...], "dtype": "f32", "data": base64-of-little-endian}.

Encoding is canonical (sorted keys, no whitespace, ascii) so that
encode(decode(line)) reproduces the line byte for byte.
"""

from __future__ import annotations

import base64
import json
from typing import Union

import numpy as np

from .errors import FormatError

METHODS = ("inpaint_rgb", "inpaint_sem", "depth", "embed_text", "fid")

ERR_INVALID_REQUEST = -32600
ERR_METHOD_NOT_FOUND = -32601
ERR_INTERNAL = -32000


def encode_tensor(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    data = base64.b64encode(arr.astype("<f4").tobytes(order="C")).decode("ascii")
    return {"shape": list(arr.shape), "dtype": "f32", "data": data}


def decode_tensor(obj) -> np.ndarray:
    if not isinstance(obj, dict):
        raise FormatError(f"tensor must be an object, got {type(obj).__name__}")
    try:
        shape = tuple(int(s) for s in obj["shape"])
        dtype = obj["dtype"]
        data = obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed tensor: {exc}") from exc
    if dtype != "f32":
        raise FormatError(f"unsupported tensor dtype {dtype!r}")
    if any(s < 0 for s in shape):
        raise FormatError(f"negative tensor dimension in {shape}")
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise FormatError(f"bad tensor payload: {exc}") from exc
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 4 * count:
        raise FormatError(f"tensor payload is {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def encode_message(obj: dict) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), sort_keys=True,
                       ensure_ascii=True) + "\n").encode("ascii")


def decode_message(line: Union[bytes, str]) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"message is not valid utf-8: {exc}") from exc
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError("message must be a JSON object")
    return obj


def make_request(req_id: int, method: str, params: dict) -> dict:
    return {"id": int(req_id), "method": method, "params": params}


def make_response(req_id: int, result: dict) -> dict:
    return {"id": int(req_id), "result": result}


def make_error(req_id: int, code: int, message: str) -> dict:
    return {"id": int(req_id), "error": {"code": int(code), "message": str(message)}}


def validate_request(obj: dict):
    """Pick apart a decoded request; raises FormatError with the matching
    protocol error code attached as .code."""
    def bad(msg):
        err = FormatError(msg)
        err.code = ERR_INVALID_REQUEST
        return err

    if not isinstance(obj, dict):
        raise bad("request must be an object")
    req_id = obj.get("id")
    if not isinstance(req_id, int) or isinstance(req_id, bool) or req_id < 0:
        raise bad("request id must be a nonnegative integer")
    method = obj.get("method")
    if not isinstance(method, str):
        raise bad("request method must be a string")
    params = obj.get("params")
    if not isinstance(params, dict):
        raise bad("request params must be an object")
    if method not in METHODS:
        err = FormatError(f"unknown method {method!r}")
        err.code = ERR_METHOD_NOT_FOUND
        raise err
    return req_id, method, params
