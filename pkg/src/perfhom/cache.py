"""Content-addressed on-disk cache of cell solves."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .cell import CorrectorSet, EffectiveTensor, build_corrector_set
from .coefficients import CoefficientField
from .fem import FieldOnMesh
from .geometry import PerforationSpec
from .mesh import mesh_unit_cell

__all__ = ["cache_key", "cache_cell", "cache_lookup", "load_or_build", "RESIDUAL_LIMITS"]

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
# diagnostics a cached entry must satisfy before reuse
RESIDUAL_LIMITS = {"cell_residual": 1e-8, "flux_residual": 1e-8, "chi_mean_max": 1e-10}
_ARRAYS = ("chi", "grad_chi", "f", "E", "b")


def cache_key(spec: PerforationSpec, coeff: CoefficientField, h: float, method: str = "direct") -> str:
    payload = {"spec": spec.as_dict(), "coeff": coeff.as_dict(), "h": float(h).hex(),
               "method": method, "version": FORMAT_VERSION}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _jsonable(d: dict) -> dict:
    return {k: float(v) for k, v in d.items()}


def cache_cell(root, cs: CorrectorSet, method: str = "direct") -> Path:
    """Write ``cs`` under its key; the directory appears atomically."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    key = cache_key(cs.spec, cs.coeff, cs.h, method)
    target = root / key
    tmp = Path(tempfile.mkdtemp(dir=root, prefix=".tmp-"))
    arrays = {name: getattr(cs, name) for name in _ARRAYS}
    arrays["A_hat"] = cs.A_hat.entries
    arrays["Psi"] = cs.Psi.values
    np.savez(tmp / "arrays.npz", **arrays)
    manifest = {"key": key, "spec": cs.spec.as_dict(), "coeff": cs.coeff.as_dict(), "h": cs.h,
                "method": method, "theta": cs.theta, "diagnostics": _jsonable(cs.diagnostics),
                "version": FORMAT_VERSION}
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)
    return target


def cache_lookup(root, spec: PerforationSpec, coeff: CoefficientField, h: float,
                 method: str = "direct") -> CorrectorSet | None:
    """Cached corrector set, or ``None`` when absent, corrupt or failing the residual limits."""
    path = Path(root) / cache_key(spec, coeff, h, method)
    if not path.exists():
        return None
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        diag = manifest["diagnostics"]
        bad = [k for k, lim in RESIDUAL_LIMITS.items() if not (abs(diag[k]) <= lim)]
        if bad:
            warnings.warn(f"cached cell solve {path.name[:12]} fails {', '.join(bad)}; recomputing", stacklevel=2)
            return None
        mesh = mesh_unit_cell(spec, h)
        mesh_full = mesh_unit_cell(spec, h, full=True)
        with np.load(path / "arrays.npz") as z:
            arr = {k: z[k] for k in z.files}
        if arr["chi"].shape != (mesh.n_nodes, 2, 2, 2) or arr["E"].shape[0] != mesh_full.n_elements:
            raise ValueError("array shapes do not match the cell mesh")
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        warnings.warn(f"corrupt cache entry {path.name[:12]} ({exc}); recomputing", stacklevel=2)
        return None
    cs = CorrectorSet(spec, coeff, h, mesh, arr["chi"], arr["grad_chi"], float(manifest["theta"]),
                      A_hat=EffectiveTensor(arr["A_hat"], float(manifest["theta"])), mesh_full=mesh_full,
                      f=arr["f"], E=arr["E"], b=arr["b"], diagnostics=dict(diag))
    psi = FieldOnMesh(mesh_full, arr["Psi"])
    psi.grad = psi.gradient()
    cs.Psi = psi
    return cs


def load_or_build(root, spec: PerforationSpec, coeff: CoefficientField, h: float,
                  method: str = "direct") -> tuple[CorrectorSet, bool]:
    """``(corrector set, cache_hit)``; builds and stores on a miss. ``root=None`` disables caching."""
    if root is not None:
        cs = cache_lookup(root, spec, coeff, h, method)
        if cs is not None:
            log.info("cell cache hit %s", cache_key(spec, coeff, h, method)[:12])
            return cs, True
    cs = build_corrector_set(spec, coeff, h, method)
    if root is not None:
        cache_cell(root, cs, method)
        log.info("cell cache store %s", cache_key(spec, coeff, h, method)[:12])
    return cs, False
