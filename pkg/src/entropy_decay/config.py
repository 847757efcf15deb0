"""Experiment configuration: a versioned JSON document.

Top-level keys are ``flux``, ``initial``, ``scheme``, ``norm``, ``lattice``
and one section per command (``decay``, ``periodic``, ``counterexample``,
``pipeline``), plus ``output``.  Unknown keys are rejected so that typos do
not silently fall back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .flux import FluxError, FluxSpec
from .norms import GridFunction
from .shapes import Ball, Shape, parse_shape

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _section(cls, obj: dict | None, name: str):
    obj = {} if obj is None else obj
    if not isinstance(obj, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
    try:
        return cls(**obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from exc


# {{{ initial data


TERM_KINDS = ("box", "hat", "gaussian", "sine", "zero", "csv")


def _vec(v, dim):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1 and dim > 1:
        a = np.full(dim, float(a[0]))
    if a.size != dim:
        raise ConfigError(f"expected a {dim}-vector, got {v}")
    return a


def _check_term(term: dict, dim: int, base: Path | None):
    kind = term.get("kind")
    if kind not in TERM_KINDS:
        raise ConfigError(f"unknown initial term kind {kind!r}; expected one of {TERM_KINDS}")
    if kind == "box":
        lo, hi = _vec(term["lo"], dim), _vec(term["hi"], dim)
        if np.any(hi <= lo):
            raise ConfigError(f"empty box {term}")
    elif kind in ("hat", "gaussian"):
        _vec(term.get("center", 0.0), dim)
        width = term.get("radius" if kind == "hat" else "sigma", 1.0)
        if not float(width) > 0:
            raise ConfigError(f"{kind} width must be positive")
    elif kind == "sine":
        _vec(term.get("wavevector", 1.0), dim)
    elif kind == "csv":
        path = _resolve(term["path"], base)
        if not path.is_file():
            raise ConfigError(f"initial data file not found: {path}")


def _resolve(path, base: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def term_support(term: dict, dim: int):
    """Bounding box of a term, or ``None`` when the term is not compactly supported."""
    kind = term["kind"]
    if kind == "box":
        return _vec(term["lo"], dim), _vec(term["hi"], dim)
    if kind == "hat":
        c, rad = _vec(term.get("center", 0.0), dim), float(term.get("radius", 1.0))
        return c - rad, c + rad
    if kind == "gaussian":
        c = _vec(term.get("center", 0.0), dim)
        reach = float(term.get("cutoff", 4.0)) * float(term.get("sigma", 1.0))
        return c - reach, c + reach
    return None


def evaluate_term(term: dict, X: np.ndarray) -> np.ndarray:
    """Term values at points ``X`` (trailing axis is space)."""
    dim = X.shape[-1]
    kind = term["kind"]
    if kind == "zero":
        return np.zeros(X.shape[:-1])
    if kind == "box":
        lo, hi = _vec(term["lo"], dim), _vec(term["hi"], dim)
        inside = np.all((X > lo) & (X < hi), axis=-1)
        return float(term.get("value", 1.0)) * inside
    if kind == "hat":
        c, rad = _vec(term.get("center", 0.0), dim), float(term.get("radius", 1.0))
        d = np.linalg.norm(X - c, axis=-1)
        return float(term.get("height", 1.0)) * np.maximum(1.0 - d / rad, 0.0)
    if kind == "gaussian":
        c, s = _vec(term.get("center", 0.0), dim), float(term.get("sigma", 1.0))
        d = np.linalg.norm(X - c, axis=-1)
        g = float(term.get("height", 1.0)) * np.exp(-0.5 * (d / s) ** 2)
        return np.where(d < float(term.get("cutoff", 4.0)) * s, g, 0.0)
    if kind == "sine":
        k = _vec(term.get("wavevector", 1.0), dim)
        return float(term.get("amplitude", 1.0)) * np.sin(2 * np.pi * (X @ k) + float(term.get("phase", 0.0)))
    raise ConfigError(f"term {kind!r} cannot be evaluated pointwise")


def load_csv_grid(path: Path, dim: int) -> GridFunction:
    """Grid function from CSV rows ``x[, y], value`` on a uniform cell-centred grid."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != dim + 1:
        raise ConfigError(f"{path}: expected {dim + 1} columns, found {data.shape[1]}")
    axes = [np.unique(data[:, k]) for k in range(dim)]
    steps = [np.diff(a) for a in axes if a.size > 1]
    if not steps:
        raise ConfigError(f"{path}: need at least two samples per axis")
    h = float(steps[0][0])
    if any(not np.allclose(s, h, rtol=1e-9, atol=1e-12) for s in steps):
        raise ConfigError(f"{path}: grid is not uniform")
    idx = [np.rint((data[:, k] - axes[k][0]) / h).astype(int) for k in range(dim)]
    values = np.zeros(tuple(a.size for a in axes))
    values[tuple(idx)] = data[:, -1]
    origin = np.array([a[0] - 0.5 * h for a in axes])
    return GridFunction(origin, h, values)


@dataclass
class InitialConfig:
    dim: int = 1
    h: float = 0.01
    terms: list = field(default_factory=lambda: [{"kind": "zero"}])
    domain: dict | None = None  # {"lo": [...], "hi": [...]}

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}")
        if not float(self.h) > 0:
            raise ConfigError("h must be positive")
        self.h = float(self.h)
        if not isinstance(self.terms, list) or not self.terms:
            raise ConfigError("initial.terms must be a non-empty list")

    def validate(self, base: Path | None):
        for t in self.terms:
            if not isinstance(t, dict):
                raise ConfigError("initial terms must be objects")
            try:
                _check_term(t, self.dim, base)
            except KeyError as exc:
                raise ConfigError(f"initial term {t} misses key {exc}") from exc

    def bounding_box(self):
        if self.domain is not None:
            return _vec(self.domain["lo"], self.dim), _vec(self.domain["hi"], self.dim)
        boxes = [term_support(t, self.dim) for t in self.terms if t["kind"] not in ("zero", "csv")]
        if any(b is None for b in boxes):
            raise ConfigError("initial data without compact support need an explicit domain")
        if not boxes:
            return np.zeros(self.dim), np.ones(self.dim)
        return np.min([b[0] for b in boxes], axis=0), np.max([b[1] for b in boxes], axis=0)

    def grid(self, base: Path | None = None, scale: float = 1.0) -> GridFunction:
        """Cell-centred samples on a grid whose edges sit on multiples of ``h``."""
        h = self.h / scale
        csv_terms = [t for t in self.terms if t["kind"] == "csv"]
        if csv_terms:
            if len(self.terms) != 1:
                raise ConfigError("a csv term cannot be combined with other terms")
            return load_csv_grid(_resolve(csv_terms[0]["path"], base), self.dim)
        lo, hi = self.bounding_box()
        lo = np.floor(lo / h + 1e-9) * h
        hi = np.ceil(hi / h - 1e-9) * h
        n = np.maximum(np.rint((hi - lo) / h).astype(int), 1)
        g = GridFunction(lo, h, np.zeros(tuple(n)))
        return g.with_values(self.evaluate(g.centers()))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.sum([evaluate_term(t, X) for t in self.terms], axis=0)


# }}}


@dataclass
class SchemeSection:
    flux: str = "lax_friedrichs"
    cfl: float = 0.45
    T: float = 1.0
    table_points: int = 2001
    output_every: float | None = None

    def __post_init__(self):
        if self.flux not in ("lax_friedrichs", "engquist_osher"):
            raise ConfigError(f"unknown numerical flux {self.flux!r}")
        if not 0 < self.cfl <= 0.5:
            raise ConfigError(f"cfl must lie in (0, 0.5], got {self.cfl}")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if int(self.table_points) < 2:
            raise ConfigError("table_points must be at least 2")

    def sample_times(self, T: float | None = None) -> list[float]:
        T = self.T if T is None else T
        if not self.output_every:
            return [T]
        n = int(np.floor(T / self.output_every + 1e-9))
        ts = [round(k * self.output_every, 12) for k in range(1, n + 1)]
        return ts if ts and abs(ts[-1] - T) < 1e-12 else ts + [T]


@dataclass
class NormSection:
    window: dict = field(default_factory=lambda: {"shape": "ball", "radius": 1.0})
    stride: float | None = None

    def shape(self, dim: int) -> Shape:
        try:
            return parse_shape(self.window, dim)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad norm window: {exc}") from exc


@dataclass
class LatticeSection:
    R: int = 50
    delta: float = 1e-6
    seed: int = 0
    max_retries: int = 100


@dataclass
class DecaySection:
    thresholds: list = field(default_factory=list)  # [[t, value], ...]
    fit_window: list | None = None
    monotone_from: float = 1.0
    monotone_tol: float = 1e-6
    oracle: bool = False
    margin: float = 2.0


@dataclass
class PeriodicSection:
    basis: list | None = None
    r: float = 1.0
    M: float | None = None
    thresholds: list = field(default_factory=list)
    R: int = 50
    ndp_radius: float = 1e-2


@dataclass
class CounterexampleSection:
    T: float = 100.0
    times: list | None = None
    ball_radius: float = 1.0
    run_scheme: bool = False


@dataclass
class PipelineSection:
    r_schedule: list = field(default_factory=lambda: [4, 8, 16])
    check_times: list = field(default_factory=lambda: [1.0, 5.0, 10.0])
    tail_fraction: float = 0.8
    tolerance_cells: int = 2
    margin: float = 2.0

    def __post_init__(self):
        if not self.r_schedule or any(not float(r) > 0 for r in self.r_schedule):
            raise ConfigError("r_schedule must hold positive scales")
        if not 0 <= self.tail_fraction < 1:
            raise ConfigError("tail_fraction must lie in [0, 1)")


@dataclass
class OutputSection:
    states_every: float | None = None
    plots: bool = True


@dataclass
class ExperimentConfig:
    flux: FluxSpec
    initial: InitialConfig
    scheme: SchemeSection = field(default_factory=SchemeSection)
    norm: NormSection = field(default_factory=NormSection)
    lattice: LatticeSection = field(default_factory=LatticeSection)
    decay: DecaySection = field(default_factory=DecaySection)
    periodic: PeriodicSection = field(default_factory=PeriodicSection)
    counterexample: CounterexampleSection = field(default_factory=CounterexampleSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: Path | None = None

    @property
    def dim(self) -> int:
        return self.initial.dim

    @classmethod
    def from_json(cls, obj: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        version = obj.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        known = {"schema_version", "flux", "initial", "scheme", "norm", "lattice", "decay", "periodic",
                 "counterexample", "pipeline", "output"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        if "flux" not in obj:
            raise ConfigError("config needs a 'flux' section")
        try:
            flux = FluxSpec.from_json(obj["flux"])
        except (FluxError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        initial = _section(InitialConfig, obj.get("initial"), "initial")
        if flux.dim != initial.dim:
            raise ConfigError(f"flux has {flux.dim} components but initial data are {initial.dim}D")
        cfg = cls(
            flux=flux,
            initial=initial,
            scheme=_section(SchemeSection, obj.get("scheme"), "scheme"),
            norm=_section(NormSection, obj.get("norm"), "norm"),
            lattice=_section(LatticeSection, obj.get("lattice"), "lattice"),
            decay=_section(DecaySection, obj.get("decay"), "decay"),
            periodic=_section(PeriodicSection, obj.get("periodic"), "periodic"),
            counterexample=_section(CounterexampleSection, obj.get("counterexample"), "counterexample"),
            pipeline=_section(PipelineSection, obj.get("pipeline"), "pipeline"),
            output=_section(OutputSection, obj.get("output"), "output"),
            base_dir=base_dir,
        )
        initial.validate(base_dir)
        cfg.norm.shape(initial.dim)
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_json(obj, base_dir=path.parent)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "flux": self.flux.to_json()}
        for name in ("initial", "scheme", "norm", "lattice", "decay", "periodic", "counterexample", "pipeline", "output"):
            out[name] = asdict(getattr(self, name))
        return out

    def window(self) -> Shape:
        return self.norm.shape(self.dim) if self.norm.window else Ball(1.0, self.dim)
