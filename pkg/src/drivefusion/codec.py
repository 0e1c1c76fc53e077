"""Strict conversion between the domain dataclasses and JSON-compatible values.

Encoding rules: enums become their value, tuples/lists become lists,
sets become sorted lists, dicts with int or enum keys become JSON objects
with string keys, and dicts with tuple keys become ``[[key...], value]``
pair lists.  Dataclasses that define a ``KIND`` class attribute are written
with a ``"kind"`` tag so unions of them can be decoded.

Decoding is strict: unknown fields, missing required fields and type
mismatches raise :class:`FieldTypeMismatch` with a JSON-path style location.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import math
import types
import typing
from collections.abc import Mapping, Sequence
from functools import lru_cache
from typing import Any, Union

from .errors import FieldTypeMismatch


def to_jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        kind = getattr(type(obj), "KIND", None)
        if kind is not None:
            out["kind"] = kind
        for f in dataclasses.fields(obj):
            out[f.name] = to_jsonable(getattr(obj, f.name))
        return out
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    if isinstance(obj, (frozenset, set)):
        return sorted((to_jsonable(x) for x in obj), key=_sort_key)
    if isinstance(obj, Mapping):
        keys = list(obj)
        if keys and all(isinstance(k, tuple) for k in keys):
            return [[to_jsonable(list(k)), to_jsonable(obj[k])] for k in keys]
        return {_key_str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    raise TypeError(f"cannot encode {type(obj).__name__}")


def _key_str(k: Any) -> str:
    if isinstance(k, enum.Enum):
        return str(k.value)
    if isinstance(k, bool):
        raise TypeError("boolean dict keys are not supported")
    return str(k)


def _sort_key(x: Any):
    return (type(x).__name__, json.dumps(x, sort_keys=True))


def dumps(obj: Any, **kw) -> str:
    kw.setdefault("sort_keys", False)
    return json.dumps(to_jsonable(obj), allow_nan=False, **kw)


@lru_cache(maxsize=None)
def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _fail(path: str, detail: str):
    raise FieldTypeMismatch(path, detail)


def from_jsonable(tp: Any, data: Any, path: str = "$") -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)

    if tp is Any:
        return data
    if tp is type(None):
        if data is not None:
            _fail(path, "expected null")
        return None
    if origin is Union or origin is types.UnionType:
        return _decode_union(args, data, path)
    if isinstance(tp, type) and issubclass(tp, enum.Enum):
        try:
            return tp(data)
        except ValueError:
            _fail(path, f"{data!r} is not a valid {tp.__name__}")
    if tp is bool:
        if not isinstance(data, bool):
            _fail(path, "expected boolean")
        return data
    if tp is int:
        if isinstance(data, bool) or not isinstance(data, int):
            _fail(path, "expected integer")
        return data
    if tp is float:
        if isinstance(data, bool) or not isinstance(data, (int, float)):
            _fail(path, "expected number")
        return float(data)
    if tp is str:
        if not isinstance(data, str):
            _fail(path, "expected string")
        return data
    if dataclasses.is_dataclass(tp):
        return _decode_dataclass(tp, data, path)
    if origin is tuple:
        if not isinstance(data, list):
            _fail(path, "expected array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(from_jsonable(args[0], x, f"{path}[{i}]") for i, x in enumerate(data))
        if len(data) != len(args):
            _fail(path, f"expected array of length {len(args)}")
        return tuple(from_jsonable(a, x, f"{path}[{i}]") for i, (a, x) in enumerate(zip(args, data)))
    if origin in (list, Sequence, typing.Sequence):
        if not isinstance(data, list):
            _fail(path, "expected array")
        return [from_jsonable(args[0] if args else Any, x, f"{path}[{i}]") for i, x in enumerate(data)]
    if origin in (frozenset, set):
        if not isinstance(data, list):
            _fail(path, "expected array")
        return frozenset(from_jsonable(args[0], x, f"{path}[{i}]") for i, x in enumerate(data))
    if origin in (dict, Mapping, typing.Mapping):
        key_t, val_t = args if args else (Any, Any)
        if typing.get_origin(key_t) is tuple:
            if data == {}:
                return {}
            if not isinstance(data, list):
                _fail(path, "expected array of [key, value] pairs")
            out = {}
            for i, item in enumerate(data):
                if not isinstance(item, list) or len(item) != 2:
                    _fail(f"{path}[{i}]", "expected [key, value] pair")
                out[from_jsonable(key_t, item[0], f"{path}[{i}][0]")] = from_jsonable(val_t, item[1], f"{path}[{i}][1]")
            return out
        if not isinstance(data, dict):
            _fail(path, "expected object")
        return {_decode_key(key_t, k, path): from_jsonable(val_t, v, f"{path}.{k}") for k, v in data.items()}
    raise TypeError(f"unsupported type {tp!r} at {path}")


def _decode_key(key_t: Any, k: str, path: str) -> Any:
    if key_t is int:
        try:
            return int(k)
        except ValueError:
            _fail(f"{path}.{k}", "expected integer key")
    if isinstance(key_t, type) and issubclass(key_t, enum.Enum):
        return from_jsonable(key_t, k, f"{path}.{k}")
    return k


def _decode_union(args: tuple, data: Any, path: str) -> Any:
    if data is None and type(None) in args:
        return None
    options = [a for a in args if a is not type(None)]
    tagged = [a for a in options if dataclasses.is_dataclass(a) and getattr(a, "KIND", None)]
    if tagged and isinstance(data, dict):
        for a in tagged:
            if data.get("kind") == a.KIND:
                return _decode_dataclass(a, data, path)
        _fail(f"{path}.kind", f"expected one of {[a.KIND for a in tagged]}")
    if len(options) == 1:
        return from_jsonable(options[0], data, path)
    errors = []
    for a in options:
        try:
            return from_jsonable(a, data, path)
        except FieldTypeMismatch as exc:
            errors.append(str(exc))
    _fail(path, "no union member matched: " + " | ".join(errors))


def _decode_dataclass(cls: type, data: Any, path: str) -> Any:
    if not isinstance(data, dict):
        _fail(path, f"expected object for {cls.__name__}")
    hints = _hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    kind = getattr(cls, "KIND", None)
    allowed = set(fields) | ({"kind"} if kind else set())
    unknown = sorted(set(data) - allowed)
    if unknown:
        _fail(path, f"unknown field(s) {unknown} for {cls.__name__}")
    if kind is not None and data.get("kind", kind) != kind:
        _fail(f"{path}.kind", f"expected {kind!r}")
    kwargs = {}
    for name, f in fields.items():
        if name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                _fail(f"{path}.{name}", "missing required field")
            continue
        kwargs[name] = from_jsonable(hints[name], data[name], f"{path}.{name}")
    return cls(**kwargs)


def loads(tp: Any, text: str) -> Any:
    return from_jsonable(tp, json.loads(text))


def finite_numbers(data: Any) -> bool:
    """True when every number nested in ``data`` is finite."""
    if isinstance(data, float):
        return math.isfinite(data)
    if isinstance(data, dict):
        return all(finite_numbers(v) for v in data.values())
    if isinstance(data, list):
        return all(finite_numbers(v) for v in data)
    return True
