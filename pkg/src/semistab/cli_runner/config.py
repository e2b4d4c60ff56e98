"""TOML scenario configs: parsing with defaults, canonical emission, hashing.

Document layout (every table optional except what the scenario needs):

    scenario = "E2"            # library id; fills the [bundle] table
    seed = 0

    [grid]
    N = 32
    tau = [0.0, 1.0]           # real and imaginary part
    weight = { kind = "cosine", amplitude = 0.3, mode = [1, 0] }

    [bundle]
    rank = 2
    flux = [0, 0]
    block_sizes = [1, 1]
    a = { amplitude = 0.5, smoothness = 0.02, entry = [1, 0] }
    phi = { kind = "constant", re = [[0, 1], [0, 0]], im = [[0, 0], [0, 0]] }

    [schedule]
    start = 1.0
    stop = 0.001
    steps = 10                 # or: values = [1.0, 0.5, ...]

    [tolerances]
    residual = 1e-9            # absolute; default 1e-9 (1 + max|Phi(H0)|)
    max_newton_iters = 40
    linear_rtol = 1e-4
    constancy_ceiling = 0.05
    kernel_gap = 1000.0
    section_test = true

    [output]
    dir = "runs/E2"
"""
import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import tomli
import tomli_w

from ..errors import ConfigurationError
from ..he_solver import geometric_schedule
from ..scenarios import LIBRARY, BundleSpec


@dataclass
class GridConfig:
    N: int = 32
    tau: List[float] = field(default_factory=lambda: [0.0, 1.0])
    weight: dict = field(default_factory=lambda: {"kind": "constant", "value": 1.0})


@dataclass
class APerturbation:
    amplitude: float = 0.0
    smoothness: float = 0.02
    entry: List[int] = field(default_factory=lambda: [1, 0])


@dataclass
class PhiSpec:
    kind: str = "zero"                     # zero | constant
    re: Optional[List[List[float]]] = None
    im: Optional[List[List[float]]] = None


@dataclass
class BundleConfig:
    rank: int = 1
    flux: List[int] = field(default_factory=lambda: [0])
    block_sizes: Optional[List[int]] = None
    a: APerturbation = field(default_factory=APerturbation)
    phi: PhiSpec = field(default_factory=PhiSpec)


@dataclass
class ScheduleConfig:
    start: float = 1.0
    stop: float = 1e-3
    steps: int = 10
    values: Optional[List[float]] = None

    def eps(self):
        if self.values is not None:
            return tuple(float(v) for v in self.values)
        return geometric_schedule(self.start, self.stop, self.steps)


@dataclass
class ToleranceConfig:
    residual: Optional[float] = None
    max_newton_iters: int = 40
    linear_rtol: float = 1e-4
    constancy_ceiling: float = 0.05
    kernel_gap: float = 1e3
    section_test: bool = True


@dataclass
class OutputConfig:
    dir: str = "runs/out"


@dataclass
class ScenarioConfig:
    scenario: Optional[str] = None
    seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    bundle: BundleConfig = field(default_factory=BundleConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def tau(self) -> complex:
        return complex(self.grid.tau[0], self.grid.tau[1])

    def phi_matrix(self):
        p = self.bundle.phi
        if p.kind == "zero":
            return None
        re = np.asarray(p.re, dtype=float)
        im = np.zeros_like(re) if p.im is None else np.asarray(p.im, dtype=float)
        return re + 1j * im

    def bundle_spec(self) -> BundleSpec:
        b = self.bundle
        return BundleSpec(
            N=self.grid.N, tau=self.tau, weight=dict(self.grid.weight), rank=b.rank,
            flux=tuple(b.flux), block_sizes=None if b.block_sizes is None else tuple(b.block_sizes),
            a_amplitude=b.a.amplitude, a_smoothness=b.a.smoothness, a_entry=tuple(b.a.entry),
            phi_matrix=self.phi_matrix())


# Parsing ----------------------------------------------------------------------------

_SECTIONS = {"grid": GridConfig, "bundle": BundleConfig, "schedule": ScheduleConfig,
             "tolerances": ToleranceConfig, "output": OutputConfig}
_NESTED = {"a": APerturbation, "phi": PhiSpec}


def _fail(path, msg):
    raise ConfigurationError(f"config field '{path}': {msg}")


def _check_keys(table, cls, path):
    allowed = set(cls.__dataclass_fields__)
    for key in table:
        if key not in allowed:
            _fail(f"{path}.{key}" if path else key, f"unknown key (allowed: {sorted(allowed)})")


def _num(x, path, integer=False, positive=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        _fail(path, f"expected a number, got {x!r}")
    if integer and not isinstance(x, int):
        _fail(path, f"expected an integer, got {x!r}")
    if not math.isfinite(x):
        _fail(path, "must be finite")
    if positive and x <= 0:
        _fail(path, f"must be positive, got {x!r}")
    return x


def _int_list(x, path):
    if not isinstance(x, list) or not x:
        _fail(path, "expected a nonempty list of integers")
    return [_num(v, f"{path}[{i}]", integer=True) for i, v in enumerate(x)]


def _library_bundle(name):
    lib = LIBRARY[name]
    b = BundleConfig(rank=lib["rank"], flux=list(lib["flux"]))
    if lib.get("a_amplitude"):
        b.a = APerturbation(lib["a_amplitude"], lib["a_smoothness"], list(lib["a_entry"]))
    if lib.get("phi_matrix") is not None:
        m = np.asarray(lib["phi_matrix"], dtype=complex)
        b.phi = PhiSpec("constant", np.real(m).tolist(), np.imag(m).tolist())
    return b


def parse_config(text: str) -> ScenarioConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> ScenarioConfig:
    _check_keys(doc, ScenarioConfig, "")
    cfg = ScenarioConfig()
    if "scenario" in doc:
        name = doc["scenario"]
        if name not in LIBRARY:
            _fail("scenario", f"unknown scenario {name!r} (known: {sorted(LIBRARY)})")
        cfg.scenario = name
        cfg.bundle = _library_bundle(name)
        cfg.output.dir = f"runs/{name}"
    if "seed" in doc:
        seed = _num(doc["seed"], "seed", integer=True)
        if not 0 <= seed < 2 ** 64:
            _fail("seed", "must be a 64-bit unsigned integer")
        cfg.seed = seed
    for sec, cls in _SECTIONS.items():
        if sec not in doc:
            continue
        table = doc[sec]
        if not isinstance(table, dict):
            _fail(sec, "expected a table")
        _check_keys(table, cls, sec)
        target = getattr(cfg, sec)
        for key, val in table.items():
            path = f"{sec}.{key}"
            if sec == "bundle" and key in _NESTED:
                if not isinstance(val, dict):
                    _fail(path, "expected a table")
                _check_keys(val, _NESTED[key], path)
                sub = _NESTED[key]()
                if key == "a":
                    sub = APerturbation(0.0) if cfg.scenario is None else target.a
                    sub = APerturbation(sub.amplitude, sub.smoothness, list(sub.entry))
                for k2, v2 in val.items():
                    setattr(sub, k2, v2)
                setattr(target, key, sub)
            else:
                setattr(target, key, val)
    if cfg.scenario is None and "bundle" not in doc:
        _fail("bundle", "required when no scenario id is given")
    _validate(cfg)
    return cfg


def _validate(cfg: ScenarioConfig):
    g = cfg.grid
    _num(g.N, "grid.N", integer=True)
    if g.N < 8 or g.N % 2:
        _fail("grid.N", "must be an even integer >= 8")
    if not isinstance(g.tau, list) or len(g.tau) != 2:
        _fail("grid.tau", "expected [re, im]")
    for i, v in enumerate(g.tau):
        _num(v, f"grid.tau[{i}]")
    if g.tau[1] <= 0:
        _fail("grid.tau", "imaginary part must be positive")
    g.tau = [float(v) for v in g.tau]
    w = g.weight
    if not isinstance(w, dict) or w.get("kind") not in ("constant", "cosine"):
        _fail("grid.weight", "expected {kind = 'constant' | 'cosine', ...}")
    allowed = {"constant": {"kind", "value"}, "cosine": {"kind", "amplitude", "mode", "value"}}
    for k in w:
        if k not in allowed[w["kind"]]:
            _fail(f"grid.weight.{k}", "unknown key")
    if "value" in w:
        _num(w["value"], "grid.weight.value", positive=True)
    if w["kind"] == "cosine":
        amp = _num(w.get("amplitude", 0.3), "grid.weight.amplitude")
        if abs(amp) >= w.get("value", 1.0):
            _fail("grid.weight.amplitude", "weight must stay positive")
        if "mode" in w:
            _int_list(w["mode"], "grid.weight.mode")
    b = cfg.bundle
    _num(b.rank, "bundle.rank", integer=True, positive=True)
    b.flux = _int_list(b.flux, "bundle.flux")
    if len(b.flux) > b.rank:
        _fail("bundle.flux", f"length {len(b.flux)} exceeds rank {b.rank}")
    if b.block_sizes is not None:
        b.block_sizes = _int_list(b.block_sizes, "bundle.block_sizes")
        if len(b.block_sizes) != len(b.flux) or sum(b.block_sizes) != b.rank:
            _fail("bundle.block_sizes", "must have one entry per flux and sum to rank")
    elif 1 < len(b.flux) < b.rank:
        _fail("bundle.block_sizes", "required when 1 < len(flux) < rank")
    _num(b.a.amplitude, "bundle.a.amplitude")
    _num(b.a.smoothness, "bundle.a.smoothness", positive=True)
    b.a.entry = _int_list(b.a.entry, "bundle.a.entry")
    if len(b.a.entry) != 2:
        _fail("bundle.a.entry", "expected [row, column]")
    b.a.amplitude, b.a.smoothness = float(b.a.amplitude), float(b.a.smoothness)
    p = b.phi
    if p.kind not in ("zero", "constant"):
        _fail("bundle.phi.kind", "supported kinds are 'zero' and 'constant'")
    if p.kind == "constant":
        for name in ("re", "im"):
            m = getattr(p, name)
            if m is None and name == "im":
                continue
            arr = np.asarray(m, dtype=float) if isinstance(m, list) else None
            if arr is None or arr.shape != (b.rank, b.rank):
                _fail(f"bundle.phi.{name}", f"expected a {b.rank}x{b.rank} matrix")
            setattr(p, name, arr.tolist())
    s = cfg.schedule
    if s.values is not None:
        if not isinstance(s.values, list) or not s.values:
            _fail("schedule.values", "expected a nonempty list")
        vals = [float(_num(v, f"schedule.values[{i}]", positive=True)) for i, v in enumerate(s.values)]
        if vals[0] > 1 or any(b2 >= a2 for a2, b2 in zip(vals, vals[1:])):
            _fail("schedule.values", "must be strictly decreasing in (0, 1]")
        s.values = vals
    else:
        _num(s.start, "schedule.start", positive=True)
        _num(s.stop, "schedule.stop", positive=True)
        _num(s.steps, "schedule.steps", integer=True, positive=True)
        if s.start > 1 or s.stop >= s.start and s.steps > 1:
            _fail("schedule", "need 1 >= start > stop > 0")
        s.start, s.stop = float(s.start), float(s.stop)
    t = cfg.tolerances
    if t.residual is not None:
        t.residual = float(_num(t.residual, "tolerances.residual", positive=True))
    _num(t.max_newton_iters, "tolerances.max_newton_iters", integer=True, positive=True)
    t.linear_rtol = float(_num(t.linear_rtol, "tolerances.linear_rtol", positive=True))
    t.constancy_ceiling = float(_num(t.constancy_ceiling, "tolerances.constancy_ceiling", positive=True))
    t.kernel_gap = float(_num(t.kernel_gap, "tolerances.kernel_gap", positive=True))
    if not isinstance(t.section_test, bool):
        _fail("tolerances.section_test", "expected true or false")
    if not isinstance(cfg.output.dir, str) or not cfg.output.dir:
        _fail("output.dir", "expected a nonempty string")


# Emission and hashing ----------------------------------------------------------------

def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in sorted(d.items()) if v is not None}
    return d


def canonical_dict(cfg: ScenarioConfig) -> dict:
    return _strip_none(asdict(cfg))


def emit_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(canonical_dict(cfg))


def config_hash(cfg: ScenarioConfig) -> str:
    """sha256 of the canonical TOML without the output directory."""
    d = canonical_dict(cfg)
    d.pop("output", None)
    return hashlib.sha256(tomli_w.dumps(d).encode()).hexdigest()
