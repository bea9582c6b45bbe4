"""Geometry configuration files (JSON).

Example::

    {
      "n": 2,
      "domain": {"box": 1.5},
      "connection": {"type": "christoffel", "entries": {"1,1,2": "x2", "2,2,2": "0"}},
      "tractors": [
        {"name": "H", "family": "Sym2", "source": "prolong-k2", "payload": "x1^2+x2^2-1"}
      ]
    }

Christoffel keys are ``"c,a,b"`` for ``Gamma^c_ab`` and metric keys ``"i,j"``, all
1-based; omitted entries are zero and the mirror entry is filled in.  A registry
connection is ``{"type": "registry", "name": "klein"}`` and keeps the registry
domain unless ``domain`` is given.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import bgg
from . import exprfield as ef
from .chartgeom import ChartGeometry, Domain, registry
from .errors import ParseError, ValidationError
from .tractor import TractorField

SOURCES = ("prolong-k1", "prolong-k2", "constants")


@dataclass
class GeometryConfig:
    geometry: ChartGeometry
    tractors: dict[str, tuple[str, TractorField]] = field(default_factory=dict)
    digest: str = ""


def _fail(path: str, msg: str):
    raise ValidationError(f"{path}: {msg}")


def _int(obj, path: str, lo: int | None = None) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        _fail(path, "expected an integer")
    if lo is not None and obj < lo:
        _fail(path, f"must be at least {lo}")
    return obj


def _expr(text, n: int, path: str) -> ef.ScalarFieldExpr:
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        text = repr(float(text))
    if not isinstance(text, str):
        _fail(path, "expected an expression string")
    try:
        return ef.parse(text, n)
    except ParseError as e:
        _fail(path, f"{e} in {text!r}")


def _indices(key: str, k: int, n: int, path: str) -> tuple[int, ...]:
    try:
        idx = tuple(int(p) for p in key.split(","))
    except ValueError:
        _fail(f"{path}[{key!r}]", "index key must be comma separated integers")
    if len(idx) != k or not all(1 <= i <= n for i in idx):
        _fail(f"{path}[{key!r}]", f"need {k} indices in 1..{n}")
    return tuple(i - 1 for i in idx)


def _domain(obj, n: int, path: str) -> Domain:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    radius = obj.get("radius")
    if radius is not None and not (isinstance(radius, (int, float)) and radius > 0):
        _fail(f"{path}.radius", "must be a positive number")
    if "box" in obj:
        a = obj["box"]
        if not (isinstance(a, (int, float)) and a > 0):
            _fail(f"{path}.box", "must be a positive number")
        return Domain.box(n, float(a), radius)
    lo, hi = obj.get("lo"), obj.get("hi")
    if not (isinstance(lo, list) and isinstance(hi, list) and len(lo) == len(hi) == n):
        _fail(path, f"give 'box' or both 'lo' and 'hi' with {n} entries")
    if not all(float(a) < float(b) for a, b in zip(lo, hi)):
        _fail(path, "need lo < hi in every coordinate")
    return Domain(tuple(map(float, lo)), tuple(map(float, hi)), radius)


def _symmetric_table(entries, n: int, k: int, path: str, what: str):
    """Entries keyed by index tuples, mirrored in the last two indices."""
    if not isinstance(entries, dict):
        _fail(path, "expected an object of index keys")
    table: dict[tuple[int, ...], ef.ScalarFieldExpr] = {}
    for key, text in entries.items():
        idx = _indices(key, k, n, path)
        e = _expr(text, n, f"{path}[{key!r}]")
        mirror = idx[:-2] + (idx[-1], idx[-2])
        for j in (idx, mirror):
            old = table.get(j)
            if old is not None and old.node is not e.node:
                _fail(f"{path}[{key!r}]", f"{what} entries must be symmetric; conflicts with an earlier entry")
            table[j] = e
    return table


def _connection(obj, n: int, dom: Domain | None, path: str) -> ChartGeometry:
    if not isinstance(obj, dict) or "type" not in obj:
        _fail(path, "expected an object with a 'type'")
    kind = obj["type"]
    if kind == "registry":
        name = obj.get("name")
        if not isinstance(name, str):
            _fail(f"{path}.name", "expected a registry name")
        g = registry(name, n if name.split("(")[0] not in ("ppwave", "s2xs2") else None)
        if g.n != n:
            _fail(path, f"{name} has dimension {g.n}, config says {n}")
        if dom is not None:
            g.domain = dom
        return g
    if dom is None:
        _fail(f"{path[:-len('connection')]}domain", "required unless the connection is a registry entry")
    zero = ef.parse("0", n)
    if kind == "christoffel":
        t = _symmetric_table(obj.get("entries"), n, 3, f"{path}.entries", "Christoffel")
        gamma = [[[t.get((c, a, b), zero) for b in range(n)] for a in range(n)] for c in range(n)]
        return ChartGeometry(n, dom, gamma=gamma, name=obj.get("name", "config"))
    if kind == "metric":
        t = _symmetric_table(obj.get("entries"), n, 2, f"{path}.entries", "metric")
        metric = [[t.get((i, j), zero) for j in range(n)] for i in range(n)]
        return ChartGeometry(n, dom, metric=metric, name=obj.get("name", "config"))
    _fail(f"{path}.type", f"unknown connection type {kind!r}; use christoffel, metric or registry")


def _tractor(geom: ChartGeometry, obj, path: str) -> tuple[str, str, TractorField]:
    if not isinstance(obj, dict):
        _fail(path, "expected an object")
    name = obj.get("name")
    family = obj.get("family")
    source = obj.get("source")
    payload = obj.get("payload")
    if not isinstance(name, str) or not name:
        _fail(f"{path}.name", "expected a non-empty string")
    if family not in bgg.FAMILIES:
        _fail(f"{path}.family", f"unknown family {family!r}; supported: {', '.join(bgg.FAMILIES)}")
    if source not in SOURCES:
        _fail(f"{path}.source", f"unknown source {source!r}; use one of {', '.join(SOURCES)}")
    n = geom.n
    if source == "constants":
        arr = np.asarray(payload, dtype=float) if isinstance(payload, list) else None
        if arr is None or arr.size == 0 or arr.shape[-1] != n + 1:
            _fail(f"{path}.payload", f"expected a nested list with trailing size {n + 1}")
        V = TractorField.constant(arr, 0.0, family)
        if family == "PairCovectors":
            V.k = 1
        return name, family, V
    want = {"prolong-k1": ("Covector", "PairCovectors"), "prolong-k2": ("Sym2",)}[source]
    if family not in want:
        _fail(f"{path}.family", f"{source} produces {' or '.join(want)}")
    if family == "PairCovectors":
        if not (isinstance(payload, list) and len(payload) == 2):
            _fail(f"{path}.payload", "a pair needs two expressions")
        s1, s2 = (_expr(p, n, f"{path}.payload[{i}]") for i, p in enumerate(payload))
        return name, family, bgg.pair(bgg.prolong_k1(geom, s1), bgg.prolong_k1(geom, s2))
    s = _expr(payload, n, f"{path}.payload")
    V = bgg.prolong_k1(geom, s) if source == "prolong-k1" else bgg.prolong_k2(geom, s)
    return name, family, V


def load_geometry(text: str) -> GeometryConfig:
    """Parse and validate a configuration; errors name the offending path."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"config: invalid JSON ({e})") from None
    if not isinstance(obj, dict):
        _fail("config", "expected a JSON object")
    n = _int(obj.get("n"), "config.n", 2)
    dom = _domain(obj["domain"], n, "config.domain") if "domain" in obj else None
    geom = _connection(obj.get("connection"), n, dom, "config.connection")
    tractors = {}
    blocks = obj.get("tractors", [])
    if not isinstance(blocks, list):
        _fail("config.tractors", "expected a list")
    for i, b in enumerate(blocks):
        name, family, V = _tractor(geom, b, f"config.tractors[{i}]")
        if name in tractors:
            _fail(f"config.tractors[{i}].name", f"duplicate tractor name {name!r}")
        tractors[name] = (family, V)
    digest = hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
    return GeometryConfig(geom, tractors, digest)


def registry_config(name: str) -> GeometryConfig:
    g = registry(name)
    digest = hashlib.sha256(json.dumps({"registry": name}).encode()).hexdigest()
    return GeometryConfig(g, {}, digest)
