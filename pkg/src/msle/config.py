"""Flat ``key = value`` experiment configuration with cross-field validation."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigInvalid
from .metrics import CompactGridSpec

KINDS = ("simulate-dyson", "forward", "trace", "perturb-init", "perturb-kappa", "hausdorff", "verify")

# default direction of the initial-value perturbation, b = a + eps * dir;
# not a pure translation, so the gap changes too
INIT_DIRECTION = (0.6, -0.3)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    N: int = 2
    kappa: float = 4.0
    kappa_star: Optional[float] = None
    T: float = 1.0
    dt: float = 1e-3
    a: tuple = ()
    b: tuple = ()
    eps: Optional[float] = None
    grid: CompactGridSpec = field(default_factory=CompactGridSpec)
    delta_trace: Optional[float] = None
    t_long: Optional[float] = None
    n_paths: int = 100
    seed: int = 0
    out: str = "msle-out"
    z: tuple = ()
    forces: str = "dyson"
    workers: Optional[int] = None
    scale: str = "full"

    def echo(self) -> dict:
        d = asdict(self)
        d["grid"] = asdict(self.grid)
        d["z"] = [[c.real, c.imag] for c in self.z]
        return d


_FLOAT = {"kappa", "kappa_star", "T", "dt", "eps", "delta_trace", "t_long"}
_INT = {"N", "n_paths", "seed", "workers"}
_GRID = {"x_min", "x_max", "y_min", "y_max", "nx", "ny"}
_TEXT = {"kind", "out", "forces", "scale"}
_LISTS = {"a", "b", "z"}


def read_pairs(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {n}: expected key = value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def _num(key, v, cast):
    try:
        return cast(v)
    except ValueError:
        raise ConfigInvalid(f"{key}: cannot parse {v!r}") from None


def _list(key, v, cast):
    parts = [p.strip() for p in v.split(",") if p.strip()]
    return tuple(_num(key, p, cast) for p in parts)


def _complex(s):
    return complex(s.replace("i", "j").replace(" ", ""))


def build(pairs: dict) -> ExperimentConfig:
    unknown = set(pairs) - _FLOAT - _INT - _GRID - _TEXT - _LISTS
    if unknown:
        raise ConfigInvalid(f"unknown keys: {', '.join(sorted(unknown))}")
    if "kind" not in pairs:
        raise ConfigInvalid("missing required key: kind")
    kw = {}
    for k, v in pairs.items():
        if k in _FLOAT:
            kw[k] = _num(k, v, float)
        elif k in _INT:
            kw[k] = _num(k, v, int)
        elif k in _TEXT:
            kw[k] = v
        elif k == "z":
            kw[k] = _list(k, v, _complex)
        elif k in _LISTS:
            kw[k] = _list(k, v, float)
    g = {k: _num(k, pairs[k], int if k in ("nx", "ny") else float) for k in _GRID if k in pairs}
    try:
        kw["grid"] = replace(CompactGridSpec(), **g)
    except ValueError as e:
        raise ConfigInvalid(f"grid: {e}") from None
    return validate(fill_defaults(ExperimentConfig(**kw)))


def fill_defaults(cfg: ExperimentConfig) -> ExperimentConfig:
    kw = {}
    if cfg.kind in ("perturb-init", "perturb-kappa", "hausdorff") and cfg.N != 2:
        raise ConfigInvalid(f"{cfg.kind} works with N = 2 driving forces")
    if not cfg.a:
        if cfg.kind == "perturb-kappa":
            kw["a"] = (1.0, -1.0)
        else:
            kw["a"] = tuple(float(cfg.N - 1 - 2 * j) for j in range(cfg.N))
    a = kw.get("a", cfg.a)
    if cfg.kind == "perturb-init" and not cfg.b and cfg.eps is not None and len(a) == 2:
        kw["b"] = tuple(x + cfg.eps * d for x, d in zip(a, INIT_DIRECTION))
    if cfg.kind == "hausdorff" and cfg.eps is None:
        kw["eps"] = 1e-3
    if cfg.kind == "forward" and not cfg.z:
        kw["z"] = tuple(cfg.grid.points().tolist())
    return replace(cfg, **kw) if kw else cfg


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.kind not in KINDS:
        raise ConfigInvalid(f"kind must be one of {', '.join(KINDS)}; got {cfg.kind!r}")
    if not 0.0 < cfg.kappa <= 4.0:
        raise ConfigInvalid("kappa must lie in (0,4]")
    if not cfg.T > 0:
        raise ConfigInvalid("T must be positive")
    if not 0 < cfg.dt <= cfg.T:
        raise ConfigInvalid("dt must lie in (0, T]")
    if abs(cfg.T / cfg.dt - round(cfg.T / cfg.dt)) > 1e-9 * cfg.T / cfg.dt:
        raise ConfigInvalid("T must be an integer multiple of dt")
    if cfg.N < 1:
        raise ConfigInvalid("N must be at least 1")
    if cfg.n_paths < 1:
        raise ConfigInvalid("n_paths must be at least 1")
    if cfg.forces not in ("dyson", "zero"):
        raise ConfigInvalid("forces must be 'dyson' or 'zero'")
    if cfg.scale not in ("full", "quick"):
        raise ConfigInvalid("scale must be 'full' or 'quick'")
    a = cfg.a
    if len(a) != cfg.N:
        raise ConfigInvalid(f"a must have N = {cfg.N} entries, got {len(a)}")
    if any(not x > y for x, y in zip(a[:-1], a[1:])):
        raise ConfigInvalid("a must be strictly decreasing (a1 > a2 > ... > aN)")
    if cfg.kind == "perturb-init":
        if cfg.eps is None:
            raise ConfigInvalid("perturb-init needs eps")
        gap = a[0] - a[1]
        if not 0 < cfg.eps < gap / 3.0:
            raise ConfigInvalid(
                f"eps = {cfg.eps:g} violates the initial-value perturbation precondition "
                f"0 < eps < (a1 - a2)/3 = {gap / 3.0:g}"
            )
        if len(cfg.b) != 2:
            raise ConfigInvalid("b must have 2 entries")
        if not cfg.b[0] > cfg.b[1]:
            raise ConfigInvalid("b must be strictly decreasing (b1 > b2)")
        if any(abs(x - y) >= cfg.eps for x, y in zip(a, cfg.b)):
            raise ConfigInvalid("need |a_k - b_k| < eps for k = 1, 2")
    if cfg.kind == "perturb-kappa":
        if cfg.kappa_star is None:
            raise ConfigInvalid("perturb-kappa needs kappa_star")
        if not 0.0 < cfg.kappa_star <= 4.0:
            raise ConfigInvalid("kappa_star must lie in (0,4]")
        if not cfg.kappa_star > cfg.kappa:
            raise ConfigInvalid("need kappa < kappa_star")
    if cfg.kind == "hausdorff" and not cfg.eps > 0:
        raise ConfigInvalid("eps must be positive")
    if cfg.delta_trace is not None and not cfg.delta_trace > 0:
        raise ConfigInvalid("delta_trace must be positive")
    if cfg.t_long is not None and not cfg.t_long > 0:
        raise ConfigInvalid("t_long must be positive")
    if any(not c.imag > 0 for c in cfg.z):
        raise ConfigInvalid("points z must lie in the upper half-plane")
    return cfg


def parse_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Config file (optional) plus ``key=value`` overrides, validated."""
    pairs = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        pairs.update(read_pairs(p.read_text()))
    for o in overrides:
        if "=" not in o:
            raise ConfigInvalid(f"override must be key=value, got {o!r}")
        k, v = o.split("=", 1)
        pairs[k.strip()] = v.strip()
    return build(pairs)
