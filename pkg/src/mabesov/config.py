"""Flat ``key=value`` experiment configuration.

One setting per line, dotted keys, ``#`` starts a comment. Besov triples are
written ``alpha,p,q`` and separated by ``;``; ``alpha`` may be a multiple of
the measured admissibility exponent, e.g. ``0.125*eps``.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import POTENTIALS

DEFAULTS = {
    "potential.name": "quadratic",
    "potential.dim": "",
    "potential.allow_degenerate": "false",
    "domain.lower": "-4",
    "domain.upper": "4",
    "resolution": "512",
    "scales.k_min": "",
    "scales.k_max": "",
    "N": "1,2,3,4,5,6",
    "besov.params": "0,2,2; 0.125*eps,1,1; -0.125*eps,inf,inf",
    "family.type": "canonical",
    "family.signs_seed": "",
    "family.i_min": "",
    "family.i_max": "",
    "samples": "2000",
    "ensemble": "50",
    "seed": "0",
    "sio.seeds": "",
    "f.path": "",
    "output_dir": ".",
    "test.inject_asymmetry": "false",
}

_ALPHA = re.compile(r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*\*\s*eps\s*$")


@dataclass(frozen=True)
class AlphaSpec:
    """``value`` or ``factor * eps``."""

    value: float
    relative: bool

    def resolve(self, eps: float) -> float:
        return self.value * eps if self.relative else self.value

    def text(self) -> str:
        return f"{self.value!r}*eps" if self.relative else repr(self.value)


@dataclass
class ExperimentConfig:
    potential: str
    dim: int
    allow_degenerate: bool
    lower: list
    upper: list
    resolution: int
    k_min: int | None
    k_max: int | None
    N: list
    besov_params: list
    family_type: str
    signs_seed: int | None
    i_min: int | None
    i_max: int | None
    samples: int
    ensemble: int
    seed: int
    sio_seeds: list
    f_path: str | None
    output_dir: Path
    inject_asymmetry: bool
    raw: dict = field(default_factory=dict)

    def resolve(self, path: str) -> Path:
        """Paths in the config are relative to ``output_dir``."""
        p = Path(path)
        return p if p.is_absolute() else self.output_dir / p

    @property
    def hash(self) -> str:
        # output location does not change the results
        text = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw) if k != "output_dir")
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _parse_lines(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = value
    return out


def _int(raw, key, optional=False):
    v = raw[key]
    if v == "" and optional:
        return None
    try:
        return int(v)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {v!r}") from None


def _bool(raw, key):
    v = raw[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw[key]!r}")


def _floats(raw, key):
    try:
        return [float(s) for s in raw[key].split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {raw[key]!r}") from None


def _exponent(text, key):
    t = text.strip().lower()
    if t in ("inf", "infinity"):
        return math.inf
    try:
        v = float(t)
    except ValueError:
        raise ConfigError(f"{key}: bad exponent {text!r}") from None
    if not v >= 1:
        raise ConfigError(f"{key}: exponents must lie in [1, inf], got {text!r}")
    return v


def parse_alpha(text, key="besov.params") -> AlphaSpec:
    m = _ALPHA.match(text)
    if m:
        return AlphaSpec(float(m.group(1)), True)
    try:
        return AlphaSpec(float(text), False)
    except ValueError:
        raise ConfigError(f"{key}: bad alpha {text!r}") from None


def _besov(raw):
    out = []
    for chunk in raw["besov.params"].split(";"):
        if not chunk.strip():
            continue
        parts = chunk.split(",")
        if len(parts) != 3:
            raise ConfigError(f"besov.params: expected alpha,p,q triples, got {chunk.strip()!r}")
        out.append((parse_alpha(parts[0]), _exponent(parts[1], "besov.params"), _exponent(parts[2], "besov.params")))
    if not out:
        raise ConfigError("besov.params: at least one triple is required")
    return out


def parse_config(text: str, seed=None, output_dir=None) -> ExperimentConfig:
    """Parse and validate; ``seed`` and ``output_dir`` override the file."""
    raw = dict(DEFAULTS)
    raw.update(_parse_lines(text))
    if seed is not None:
        raw["seed"] = str(seed)
    if output_dir is not None:
        raw["output_dir"] = str(output_dir)
    name = raw["potential.name"]
    if name not in POTENTIALS:
        raise ConfigError(f"potential.name: unknown potential {name!r}; choose from {sorted(POTENTIALS)}")
    dim = _int(raw, "potential.dim", optional=True)
    dim = POTENTIALS[name][1] if dim is None else dim
    if dim not in (1, 2):
        raise ConfigError(f"potential.dim must be 1 or 2, got {dim}")
    lower, upper = _floats(raw, "domain.lower"), _floats(raw, "domain.upper")
    if len(lower) == 1:
        lower = lower * dim
    if len(upper) == 1:
        upper = upper * dim
    if len(lower) != dim or len(upper) != dim:
        raise ConfigError(f"domain corners need {dim} coordinates")
    if any(not (lo < hi) for lo, hi in zip(lower, upper)):
        raise ConfigError(f"empty domain box {lower} .. {upper}")
    resolution = _int(raw, "resolution")
    if resolution < 16:
        raise ConfigError(f"resolution must be at least 16, got {resolution}")
    Ns = [int(v) for v in _floats(raw, "N")]
    if not Ns or any(n < 1 for n in Ns):
        raise ConfigError("N: expected positive integers")
    ftype = raw["family.type"]
    if ftype not in ("canonical", "two-bump"):
        raise ConfigError(f"family.type must be canonical or two-bump, got {ftype!r}")
    samples = _int(raw, "samples")
    ensemble = _int(raw, "ensemble")
    if samples < 100:
        raise ConfigError(f"samples must be at least 100, got {samples}")
    if ensemble < 2:
        raise ConfigError(f"ensemble must be at least 2, got {ensemble}")
    seed_v = _int(raw, "seed")
    sio_seeds = [int(v) for v in _floats(raw, "sio.seeds")] or [seed_v, seed_v + 1, seed_v + 2]
    return ExperimentConfig(
        potential=name,
        dim=dim,
        allow_degenerate=_bool(raw, "potential.allow_degenerate"),
        lower=lower,
        upper=upper,
        resolution=resolution,
        k_min=_int(raw, "scales.k_min", optional=True),
        k_max=_int(raw, "scales.k_max", optional=True),
        N=Ns,
        besov_params=_besov(raw),
        family_type=ftype,
        signs_seed=_int(raw, "family.signs_seed", optional=True),
        i_min=_int(raw, "family.i_min", optional=True),
        i_max=_int(raw, "family.i_max", optional=True),
        samples=samples,
        ensemble=ensemble,
        seed=seed_v,
        sio_seeds=sio_seeds,
        f_path=raw["f.path"] or None,
        output_dir=Path(raw["output_dir"]),
        inject_asymmetry=_bool(raw, "test.inject_asymmetry"),
        raw=raw,
    )


def load_config(path, seed=None, output_dir=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, seed=seed, output_dir=output_dir)
