"""Wire format: canonical newline-delimited JSON with base64 f32 tensors.

Mirrors the engine's protocol exactly. Canonical encoding means sorted keys,
no whitespace, ascii escapes, one trailing newline; re-encoding a decoded
line must reproduce it byte for byte.
"""

from __future__ import annotations

import base64
import json
from typing import Union

import numpy as np

METHODS = ("inpaint_rgb", "inpaint_sem", "depth", "embed_text", "fid")

ERR_INVALID_REQUEST = -32600
ERR_METHOD_NOT_FOUND = -32601
ERR_INTERNAL = -32000


class WireError(ValueError):
    """Malformed message or tensor; .code carries the protocol error code."""

    def __init__(self, message, code=ERR_INVALID_REQUEST):
        super().__init__(message)
        self.code = code


def encode_tensor(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    data = base64.b64encode(arr.astype("<f4").tobytes(order="C")).decode("ascii")
    return {"shape": list(arr.shape), "dtype": "f32", "data": data}


def decode_tensor(obj) -> np.ndarray:
    if not isinstance(obj, dict):
        raise WireError(f"tensor must be an object, got {type(obj).__name__}")
    try:
        shape = tuple(int(s) for s in obj["shape"])
        dtype = obj["dtype"]
        data = obj["data"]
    except (KeyError, TypeError, ValueError) as exc:
        raise WireError(f"malformed tensor: {exc}") from exc
    if dtype != "f32":
        raise WireError(f"unsupported tensor dtype {dtype!r}")
    if any(s < 0 for s in shape):
        raise WireError(f"negative tensor dimension in {shape}")
    if not isinstance(data, str):
        raise WireError("tensor data must be a base64 string")
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise WireError(f"bad tensor payload: {exc}") from exc
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 4 * count:
        raise WireError(f"tensor payload is {len(raw)} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def encode_message(obj: dict) -> bytes:
    return (json.dumps(obj, separators=(",", ":"), sort_keys=True,
                       ensure_ascii=True) + "\n").encode("ascii")


def decode_message(line: Union[bytes, str]) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WireError(f"message is not valid utf-8: {exc}") from exc
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"message is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise WireError("message must be a JSON object")
    return obj


def make_response(req_id: int, result: dict) -> dict:
    return {"id": int(req_id), "result": result}


def make_error(req_id: int, code: int, message: str) -> dict:
    return {"id": int(req_id), "error": {"code": int(code), "message": str(message)}}


def validate_request(obj: dict):
    """Returns (id, method, params) or raises WireError with the right code."""
    if not isinstance(obj, dict):
        raise WireError("request must be an object")
    req_id = obj.get("id")
    if not isinstance(req_id, int) or isinstance(req_id, bool) or req_id < 0:
        raise WireError("request id must be a nonnegative integer")
    method = obj.get("method")
    if not isinstance(method, str):
        raise WireError("request method must be a string")
    params = obj.get("params")
    if not isinstance(params, dict):
        raise WireError("request params must be an object")
    if method not in METHODS:
        raise WireError(f"unknown method {method!r}", code=ERR_METHOD_NOT_FOUND)
    return req_id, method, params
