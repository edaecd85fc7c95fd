"""Save and load fitted surrogates.

One container format for all surrogate kinds.  A record is a flat mapping
with a ``kind`` field (``ftt``, ``kernel`` or ``mlp``) and, in this order:

* ftt:    d, mode_sizes, ranks, cores (each core flattened in C order of its
          (r_left, n, r_right) shape), bases ({degree_count, domain})
* kernel: family, shape, regularization, centers (M x d), coefficients (M)
* mlp:    input_dim, hidden_widths, activation, residual, seed,
          weights (per layer, (out, in)), biases

``.json`` files hold the record as JSON (floats written with repr, so values
round-trip exactly).  ``.npz`` files hold arrays in binary with the scalar
fields in a JSON ``header`` entry.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .basis import BasisSpec
from .kernels import KernelSpec, KernelSurrogate
from .mlp import MLPConfig, MLPParams, MLPSurrogate
from .tt import FunctionalTT, TensorTrain


def to_record(obj) -> dict:
    if isinstance(obj, FunctionalTT):
        tr = obj.train
        return {"kind": "ftt", "d": tr.d, "mode_sizes": list(tr.mode_sizes), "ranks": list(tr.ranks),
                "cores": [c.ravel() for c in tr.cores], "bases": [b.to_dict() for b in obj.bases]}
    if isinstance(obj, KernelSurrogate):
        return {"kind": "kernel", "family": obj.spec.family, "shape": float(obj.spec.shape),
                "regularization": float(obj.regularization), "centers": obj.centers,
                "coefficients": obj.coefficients,
                "domain": None if obj.domain is None else np.asarray(obj.domain)}
    if isinstance(obj, MLPSurrogate):
        c = obj.config
        return {"kind": "mlp", "input_dim": c.input_dim, "hidden_widths": list(c.hidden_widths),
                "activation": c.activation, "residual": c.residual, "seed": c.seed,
                "weights": list(obj.params.weights), "biases": list(obj.params.biases)}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def from_record(rec: dict):
    kind = rec["kind"]
    if kind == "ftt":
        full = (1, *rec["ranks"], 1)
        cores = [np.asarray(c, dtype=float).reshape(full[k], n, full[k + 1])
                 for k, (c, n) in enumerate(zip(rec["cores"], rec["mode_sizes"]))]
        return FunctionalTT(TensorTrain(cores), tuple(BasisSpec.from_dict(b) for b in rec["bases"]))
    if kind == "kernel":
        dom = rec.get("domain")
        return KernelSurrogate(KernelSpec(rec["family"], rec["shape"]),
                               np.asarray(rec["centers"], dtype=float).reshape(len(rec["coefficients"]), -1),
                               np.asarray(rec["coefficients"], dtype=float), rec["regularization"],
                               None if dom is None else np.asarray(dom, dtype=float))
    if kind == "mlp":
        cfg = MLPConfig(rec["input_dim"], tuple(rec["hidden_widths"]), rec["activation"],
                        rec["residual"], rec["seed"])
        params = MLPParams([np.atleast_2d(np.asarray(w, dtype=float)) for w in rec["weights"]],
                           [np.asarray(b, dtype=float).reshape(-1) for b in rec["biases"]])
        return MLPSurrogate(params, cfg)
    raise ValueError(f"unknown record kind {kind!r}")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return v.item()
    return v


_ARRAY_LISTS = ("cores", "weights", "biases")
_ARRAYS = ("centers", "coefficients", "domain")


def save(obj, path) -> None:
    path = Path(path)
    rec = to_record(obj)
    if path.suffix == ".json":
        path.write_text(json.dumps(_jsonable(rec)), encoding="utf-8")
        return
    header, arrays = {}, {}
    for key, val in rec.items():
        if key in _ARRAY_LISTS:
            header[key] = len(val)
            for i, a in enumerate(val):
                arrays[f"{key}_{i}"] = np.asarray(a)
        elif key in _ARRAYS and val is not None:
            arrays[key] = np.asarray(val)
        else:
            header[key] = _jsonable(val)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load(path):
    path = Path(path)
    if path.suffix == ".json":
        return from_record(json.loads(path.read_text(encoding="utf-8")))
    with np.load(path, allow_pickle=False) as z:
        rec = json.loads(str(z["header"]))
        for key in _ARRAY_LISTS:
            if key in rec:
                rec[key] = [z[f"{key}_{i}"] for i in range(rec[key])]
        for key in _ARRAYS:
            if key in z.files:
                rec[key] = z[key]
        rec.setdefault("domain", None)
    return from_record(rec)
