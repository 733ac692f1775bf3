"""JSON serialization of systems, reduced models and energy functions.

Floats are written with ``repr`` precision, so every file round-trips
bit-for-bit. ``A`` may be stored dense (nested lists) or as CSR::

    {"format": "csr", "shape": [n, n], "data": [...], "indices": [...],
     "indptr": [...]}
"""
from __future__ import annotations

import json
import math

import numpy as np
import scipy.sparse as sp

from .cp_tensor import CPVector
from .energy import EnergyFunction
from .errors import ValidationError
from .mor import ReducedModel
from .system import LPOSystem

__all__ = [
    "load_energy",
    "load_reduced",
    "load_system",
    "matrix_from_json",
    "matrix_to_json",
    "save_energy",
    "save_reduced",
    "save_system",
    "system_from_dict",
    "system_to_dict",
]


def _finite(obj):
    """Replace non-finite floats by strings JSON can carry."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    return obj


def matrix_to_json(M, sparse: bool = False):
    if sparse or sp.issparse(M):
        S = sp.csr_matrix(M)
        return {"format": "csr", "shape": list(S.shape),
                "data": S.data.tolist(), "indices": S.indices.tolist(),
                "indptr": S.indptr.tolist()}
    return np.asarray(M, dtype=float).tolist()


def matrix_from_json(obj) -> np.ndarray:
    if isinstance(obj, dict):
        if obj.get("format") != "csr":
            raise ValidationError(f"unknown matrix format {obj.get('format')!r}")
        try:
            S = sp.csr_matrix((obj["data"], obj["indices"], obj["indptr"]),
                              shape=tuple(obj["shape"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise ValidationError(f"malformed CSR matrix: {exc}") from None
        return S.toarray()
    M = np.asarray(obj, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    return M


def system_to_dict(sys: LPOSystem, sparse_A: bool = False) -> dict:
    return {
        "n": sys.n,
        "m": sys.m,
        "d": sys.d,
        "A": matrix_to_json(sys.A, sparse_A),
        "B": matrix_to_json(sys.B),
        "outputs": [c.to_dict() for c in sys.outputs],
    }


def system_from_dict(data: dict, check_stability: bool = True) -> LPOSystem:
    try:
        A = matrix_from_json(data["A"])
        B = matrix_from_json(data["B"])
        outs = tuple(None if c is None else CPVector.from_dict(c)
                     for c in data["outputs"])
    except KeyError as exc:
        raise ValidationError(f"system file lacks field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed system file: {exc}") from None
    sys = LPOSystem(A, B, outs, check_stability=check_stability)
    for key, val in (("n", sys.n), ("m", sys.m), ("d", sys.d)):
        if key in data and int(data[key]) != val:
            raise ValidationError(f"declared {key}={data[key]} but data gives {val}")
    return sys


def _write(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_finite(obj), fh)
        fh.write("\n")


def _read(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None


def save_system(path, sys: LPOSystem, sparse_A: bool = False) -> None:
    _write(path, system_to_dict(sys, sparse_A))


def load_system(path, check_stability: bool = True) -> LPOSystem:
    return system_from_dict(_read(path), check_stability)


def save_reduced(path, rom: ReducedModel) -> None:
    data = system_to_dict(rom.reduced)
    data["V"] = matrix_to_json(rom.V)
    data["W"] = matrix_to_json(rom.W)
    data["provenance"] = rom.provenance()
    _write(path, data)


def load_reduced(path) -> ReducedModel:
    data = _read(path)
    sys = system_from_dict(data, check_stability=False)
    prov = dict(data.get("provenance", {}))
    method = prov.pop("method", "unknown")
    for key in ("r", "stable"):
        prov.pop(key, None)
    if "V" in data and "W" in data:
        V = matrix_from_json(data["V"])
        W = matrix_from_json(data["W"])
    else:
        V = W = np.eye(sys.n)
    return ReducedModel(V, W, sys, method, prov)


def save_energy(path, E: EnergyFunction, meta: dict | None = None) -> None:
    data = E.to_dict()
    if meta:
        data["meta"] = meta
    _write(path, data)


def load_energy(path) -> EnergyFunction:
    data = _read(path)
    try:
        return EnergyFunction.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed energy file: {exc}") from None
