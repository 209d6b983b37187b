"""JSON envelope for covariance decompositions.

Schema ``spoet-decomposition/1``: metadata, the global eigen system, one
record per local block, and the idiosyncratic part as sparse upper-triangle
triplets.  The dense total is optional and written as a side-car CSV.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError
from .estimators import CovarianceDecomposition, FactorComponent

SCHEMA = "spoet-decomposition/1"


def json_default(obj):
    """Fallback encoder for numpy scalar/array types."""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def decomposition_to_dict(dec: CovarianceDecomposition) -> dict:
    """JSON-serializable envelope (without the optional dense total)."""
    idx = np.triu_indices(dec.p)
    values = dec.idiosyncratic[idx]
    nz = values != 0.0
    triplets = [
        [int(i), int(j), float(v)]
        for i, j, v in zip(idx[0][nz], idx[1][nz], values[nz])
    ]
    return {
        "schema": SCHEMA,
        "meta": dec.meta,
        "p": dec.p,
        "k": dec.global_component.rank,
        "r_l": [c.rank for c in dec.local_components],
        "global": {
            "eigenvalues": dec.global_component.eigenvalues.tolist(),
            "eigenvectors": dec.global_component.vectors.tolist(),
        },
        "local": [
            {
                "start": c.start,
                "eigenvalues": c.eigenvalues.tolist(),
                "eigenvectors": c.vectors.tolist(),
            }
            for c in dec.local_components
        ],
        "idiosyncratic": {"format": "upper-triplets", "entries": triplets},
    }


def decomposition_from_dict(payload: dict) -> CovarianceDecomposition:
    """Rebuild a decomposition from its JSON envelope."""
    if payload.get("schema") != SCHEMA:
        raise DataError(f"unexpected schema {payload.get('schema')!r}")
    p = int(payload["p"])
    g = payload["global"]
    global_component = FactorComponent(
        eigenvalues=np.asarray(g["eigenvalues"], dtype=float),
        vectors=np.asarray(g["eigenvectors"], dtype=float).reshape(p, -1),
        start=0,
    )
    locals_ = tuple(
        FactorComponent(
            eigenvalues=np.asarray(rec["eigenvalues"], dtype=float),
            vectors=np.asarray(rec["eigenvectors"], dtype=float).reshape(
                len(rec["eigenvectors"]), -1
            ),
            start=int(rec["start"]),
        )
        for rec in payload["local"]
    )
    idio = np.zeros((p, p))
    for i, j, v in payload["idiosyncratic"]["entries"]:
        idio[i, j] = v
        idio[j, i] = v
    return CovarianceDecomposition.assemble(
        global_component, locals_, idio, dict(payload.get("meta", {}))
    )


def write_decomposition(path, dec: CovarianceDecomposition) -> None:
    with open(path, "w") as handle:
        json.dump(decomposition_to_dict(dec), handle, indent=1, default=json_default)
        handle.write("\n")


def read_decomposition(path) -> CovarianceDecomposition:
    with open(path) as handle:
        return decomposition_from_dict(json.load(handle))
