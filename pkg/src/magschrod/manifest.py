"""INI experiment manifests and bit-stable result files.

A manifest is a ``configparser`` file::

    [grid]
    dim = 1
    extents = 0 1          ; "0 1; 0 1" in 2D
    nx = 101
    nt = 201
    T = 3

    [weight]
    x0 = -0.3
    lambda = 1.0           ; comma-separated list allowed
    s_min = 1
    s_max = 100
    s_count = 12

    [experiment]
    case = case1
    seed = 0

    [pair]
    delta = 0.1, 0.01, 0.001

    [output]
    dir = results

Every numeric field is parsed and every construction validated before any
solve starts; failures raise :class:`ManifestError` naming the field.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .grid import SpaceTimeGrid
from .stability import CASES
from .weights import CarlemanWeight, build_default_weight, certify_pseudoconvexity

DEFAULT_TOLERANCES = {
    "ratio_factor": 10.0,
    "carleman_factor": 2.0,
    "order_min": 1.8,
    "order_max": 2.2,
    "initial_bound_slack": 10.0,
}


class ManifestError(ValueError):
    """Invalid manifest content; the message names the offending field."""


@dataclass
class Manifest:
    grid: SpaceTimeGrid
    x0: tuple
    lambdas: tuple
    s_grid: np.ndarray
    case: str = "case1"
    deltas: tuple = (0.1,)
    delta2: complex = 0.0
    a: complex = 0.0
    power: int = 3
    M: Optional[float] = None
    r0: float = 1.0
    ensemble: int = 1
    seed: int = 0
    mode: int = 1
    rho: complex = 0.0
    A_amp: float = 0.0
    out_dir: Path = Path("results")
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    source: str = ""

    def weight(self, lam: float, s: float = 1.0) -> CarlemanWeight:
        return build_default_weight(self.grid, self.x0, lam, s)


def _floats(text: str, where: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ManifestError(f"{where}: expected numbers, got {text!r}") from exc


def _complex(text: str, where: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError as exc:
        raise ManifestError(f"{where}: expected a complex number, got {text!r}") from exc


def _get(cp, section, key, conv, default=None, required=False):
    where = f"[{section}] {key}"
    if not cp.has_option(section, key):
        if required:
            raise ManifestError(f"{where}: missing")
        return default
    raw = cp.get(section, key)
    try:
        return conv(raw, where)
    except ManifestError:
        raise
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def _int(text, where):
    try:
        return int(text)
    except ValueError as exc:
        raise ManifestError(f"{where}: expected an integer, got {text!r}") from exc


def _float(text, where):
    vals = _floats(text, where)
    if len(vals) != 1:
        raise ManifestError(f"{where}: expected one number, got {text!r}")
    return vals[0]


def parse_manifest(text: str, seed: Optional[int] = None, out_dir=None, source="<string>") -> Manifest:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ManifestError(f"parse error: {exc}") from exc
    if not cp.has_section("grid"):
        raise ManifestError("[grid]: missing section")

    dim = _get(cp, "grid", "dim", _int, 1)
    ext_text = _get(cp, "grid", "extents", lambda t, w: t, "; ".join(["0 1"] * dim))
    extents = [_floats(part, "[grid] extents") for part in ext_text.split(";")]
    if len(extents) != dim or any(len(e) != 2 for e in extents):
        raise ManifestError(f"[grid] extents: need {dim} pairs 'a b' separated by ';'")
    nx = _get(cp, "grid", "nx", _floats, required=True)
    if any(n != int(n) for n in nx):
        raise ManifestError("[grid] nx: expected integers")
    nx = tuple(int(n) for n in nx)
    nx = nx[0] if len(nx) == 1 else nx
    nt = _get(cp, "grid", "nt", _int, required=True)
    T = _get(cp, "grid", "T", _float, 1.0)
    try:
        grid = SpaceTimeGrid(tuple(extents), nx, nt, T)
    except ValueError as exc:
        raise ManifestError(f"[grid]: {exc}") from exc

    sec = "weight"
    x0 = _get(cp, sec, "x0", _floats, (-1.0,) + (0.5,) * (dim - 1))
    lambdas = _get(cp, sec, "lambda", _floats, (1.0,))
    s_min = _get(cp, sec, "s_min", _float, 1.0)
    s_max = _get(cp, sec, "s_max", _float, 100.0)
    s_count = _get(cp, sec, "s_count", _int, 12)
    if s_count < 1 or not 0 < s_min <= s_max:
        raise ManifestError("[weight] s grid: need 0 < s_min <= s_max and s_count >= 1")
    s_grid = np.geomspace(s_min, s_max, s_count)

    case = _get(cp, "experiment", "case", lambda t, w: t.strip(), "case1")
    if case not in CASES:
        raise ManifestError(f"[experiment] case: unknown {case!r}, expected one of {CASES}")
    manifest_seed = _get(cp, "experiment", "seed", _int, 0)
    ensemble = _get(cp, "experiment", "ensemble", _int, 1)
    if ensemble < 1:
        raise ManifestError("[experiment] ensemble: must be >= 1")

    tol = dict(DEFAULT_TOLERANCES)
    for key in DEFAULT_TOLERANCES:
        tol[key] = _get(cp, "experiment", key, _float, tol[key])

    deltas = _get(cp, "pair", "delta", _floats, (0.1,))
    delta2 = _get(cp, "pair", "delta2", _complex, 0.0)
    a = _get(cp, "pair", "a", _complex, 0.0)
    power = _get(cp, "pair", "power", _int, 3)
    M = _get(cp, "pair", "M", _float, None)
    r0 = _get(cp, "states", "r0", _float, 1.0)
    if not r0 > 0:
        raise ManifestError("[states] r0: must be positive")
    mode = _get(cp, "states", "mode", _int, 1)
    rho = _get(cp, "potential", "rho", _complex, 0.0)
    A_amp = _get(cp, "potential", "A_amp", _float, 0.0)
    out = _get(cp, "output", "dir", lambda t, w: Path(t.strip()), Path("results"))

    m = Manifest(
        grid=grid,
        x0=tuple(x0),
        lambdas=tuple(lambdas),
        s_grid=s_grid,
        case=case,
        deltas=tuple(deltas),
        delta2=delta2,
        a=a,
        power=power,
        M=M,
        r0=r0,
        ensemble=ensemble,
        seed=manifest_seed if seed is None else int(seed),
        mode=mode,
        rho=rho,
        A_amp=A_amp,
        out_dir=Path(out_dir) if out_dir is not None else out,
        tolerances=tol,
        source=source,
    )
    validate_weight(m)
    return m


def validate_weight(m: Manifest) -> None:
    if len(m.x0) != m.grid.dim:
        raise ManifestError(f"[weight] x0: need {m.grid.dim} coordinates")
    for lam in m.lambdas:
        try:
            certify_pseudoconvexity(m.weight(lam))
        except ValueError as exc:
            raise ManifestError(f"[weight] precondition: {exc}") from exc


def load_manifest(path, seed=None, out_dir=None) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest(text, seed=seed, out_dir=out_dir, source=str(path))


# -- output ------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path`` and rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    atomic_write_text(path, csv_text(columns, rows))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_summary(path, summary: dict) -> None:
    atomic_write_text(path, json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
