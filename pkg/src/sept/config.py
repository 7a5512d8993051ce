"""Plain-text ``key=value`` configs and the CLI run configuration."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .discrepancy import MixtureSpec, random_unit_means
from .errors import ParseError, ValidationError
from .ivf import PRESETS


def parse_kv(text: str, source: str = "<config>") -> dict[str, tuple[str, int]]:
    """Map key -> (raw value, line number). ``#`` starts a comment."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno, source)
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ParseError("empty key", lineno, source)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno, source)
        out[key] = (value.strip(), lineno)
    return out


def _convert(raw: str, kind, key: str, lineno: int, source: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}", lineno, source) from None


def typed_fields(cls, kv: dict[str, tuple[str, int]], source: str = "<config>") -> dict:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out = {}
    for key, (raw, lineno) in kv.items():
        if key not in names:
            raise ParseError(f"unknown key {key!r}", lineno, source)
        out[key] = _convert(raw, hints[key], key, lineno, source)
    return out


def _floats(raw: str, key: str, lineno: int, source: str) -> list[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}", lineno, source) from None


def mixture_from_text(text: str, seed: int, source: str = "<config>") -> tuple[MixtureSpec, str]:
    """Build a :class:`MixtureSpec` (and metric) from a synth config.

    Keys: ``dimension``, ``components``, ``stddev``, optional ``weights``
    (comma list), ``metric``, ``means_seed``, and explicit ``mean.<i>`` rows
    that override the random unit means.
    """
    kv = parse_kv(text, source)
    known = {"dimension", "components", "stddev", "weights", "metric", "means_seed"}
    for key, (_, lineno) in kv.items():
        if key not in known and not key.startswith("mean."):
            raise ParseError(f"unknown key {key!r}", lineno, source)
    for required in ("stddev",):
        if required not in kv:
            raise ParseError(f"missing key {required!r}", None, source)

    def get(key, kind, default=None):
        if key not in kv:
            return default
        raw, lineno = kv[key]
        return _convert(raw, kind, key, lineno, source)

    explicit = sorted(k for k in kv if k.startswith("mean."))
    if explicit:
        rows = []
        for i, key in enumerate(explicit):
            raw, lineno = kv[key]
            if key != f"mean.{i}":
                raise ParseError(f"mean rows must be numbered 0..n-1, got {key!r}", lineno, source)
            rows.append(_floats(raw, key, lineno, source))
        if len({len(r) for r in rows}) != 1:
            raise ParseError("mean rows have different lengths", kv[explicit[0]][1], source)
        means = np.array(rows)
    else:
        dim = get("dimension", int)
        comps = get("components", int, 1)
        if dim is None:
            raise ParseError("missing key 'dimension'", None, source)
        means = random_unit_means(comps, dim, get("means_seed", int, 0))
    weights = None
    if "weights" in kv:
        raw, lineno = kv["weights"]
        weights = _floats(raw, "weights", lineno, source)
    metric = get("metric", str, "cosine")
    try:
        spec = MixtureSpec(means, get("stddev", float), weights, seed)
    except ValidationError as exc:
        raise ParseError(str(exc), None, source) from None
    return spec, metric


def mixture_from_file(path, seed: int) -> tuple[MixtureSpec, str]:
    return mixture_from_text(Path(path).read_text(), seed, str(path))


@dataclass
class RunConfig:
    metric: str = "cosine"
    nlist: int | None = None
    nprobe: int | None = None
    dimension: int | None = None
    k: int = 10
    budget: int | None = None
    rerank: bool = False
    seed: int | None = None
    preset: str | None = None

    def apply_preset(self) -> "RunConfig":
        """Fill nlist/nprobe/dimension from the preset; explicit values win."""
        if self.preset is None:
            return self
        if self.preset not in PRESETS:
            raise ValidationError(f"unknown preset {self.preset!r}; known: {sorted(PRESETS)}")
        p = PRESETS[self.preset]
        return dataclasses.replace(
            self,
            nlist=self.nlist if self.nlist is not None else p.nlist,
            nprobe=self.nprobe if self.nprobe is not None else p.nprobe,
            dimension=self.dimension if self.dimension is not None else p.dimension,
        )
