"""Unit commitment instances: data model, text format, built-in systems."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class InstanceError(ValueError):
    """Raised when an instance fails validation."""


class InstanceParseError(InstanceError):
    """Raised when an instance file cannot be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownInstanceError(KeyError):
    """Raised by :func:`builtin` for names that are not bundled."""


@dataclass(frozen=True)
class GeneratorUnit:
    """Cost and operating limits of one generator.

    Costs follow ``a*y + b*p + c*p**2``; ramps are MW per period.
    """

    a: float
    b: float
    c: float
    p_min: float
    p_max: float
    r_up: float
    r_dn: float

    def violations(self):
        out = []
        vals = (self.a, self.b, self.c, self.p_min, self.p_max, self.r_up, self.r_dn)
        if not all(math.isfinite(v) for v in vals):
            out.append("non-finite coefficient")
        if self.p_min < 0:
            out.append(f"p_min={self.p_min} < 0")
        if self.p_min > self.p_max:
            out.append(f"p_min={self.p_min} > p_max={self.p_max}")
        if self.c < 0:
            out.append(f"c={self.c} < 0")
        if self.r_up <= 0:
            out.append(f"r_up={self.r_up} <= 0")
        if self.r_dn <= 0:
            out.append(f"r_dn={self.r_dn} <= 0")
        return out


@dataclass(frozen=True)
class UcInstance:
    """A multi-period unit commitment instance.

    Construction validates every invariant and raises :class:`InstanceError`
    listing all violations.
    """

    name: str
    units: tuple
    loads: tuple
    reserves: tuple
    _arrays: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "loads", tuple(float(v) for v in self.loads))
        object.__setattr__(self, "reserves", tuple(float(v) for v in self.reserves))
        problems = []
        if len(self.units) < 1:
            problems.append("instance needs at least one unit")
        if len(self.loads) < 1:
            problems.append("instance needs at least one period")
        if len(self.loads) != len(self.reserves):
            problems.append(
                f"len(loads)={len(self.loads)} != len(reserves)={len(self.reserves)}"
            )
        for i, u in enumerate(self.units):
            problems.extend(f"unit {i}: {msg}" for msg in u.violations())
        for t, load in enumerate(self.loads):
            if not math.isfinite(load) or load <= 0:
                problems.append(f"period {t}: load={load} must be > 0")
        for t, res in enumerate(self.reserves):
            if not math.isfinite(res) or res < 0:
                problems.append(f"period {t}: reserve={res} must be >= 0")
        if problems:
            raise InstanceError(f"invalid instance {self.name!r}: " + "; ".join(problems))
        cols = np.array(
            [[u.a, u.b, u.c, u.p_min, u.p_max, u.r_up, u.r_dn] for u in self.units],
            dtype=float,
        )
        arrays = {key: cols[:, j].copy() for j, key in enumerate(
            ("a", "b", "c", "p_min", "p_max", "r_up", "r_dn"))}
        arrays["loads"] = np.array(self.loads)
        arrays["reserves"] = np.array(self.reserves)
        for arr in arrays.values():
            arr.setflags(write=False)
        object.__setattr__(self, "_arrays", arrays)

    @property
    def n_units(self):
        return len(self.units)

    @property
    def n_periods(self):
        return len(self.loads)

    @property
    def shape(self):
        return (self.n_units, self.n_periods)

    # read-only column views
    a = property(lambda self: self._arrays["a"])
    b = property(lambda self: self._arrays["b"])
    c = property(lambda self: self._arrays["c"])
    p_min = property(lambda self: self._arrays["p_min"])
    p_max = property(lambda self: self._arrays["p_max"])
    r_up = property(lambda self: self._arrays["r_up"])
    r_dn = property(lambda self: self._arrays["r_dn"])
    load = property(lambda self: self._arrays["loads"])
    reserve = property(lambda self: self._arrays["reserves"])


def count_constraints(inst: UcInstance) -> int:
    """Number of scalar constraints used by the violation metric.

    Capacity lower and upper limits count separately, as do ramp-up and
    ramp-down; balance and reserve contribute one row per period.
    """
    n, t = inst.shape
    return 2 * n * t + 2 * n * (t - 1) + t + t


# ---------------------------------------------------------------------------
# text format

def _fmt(value: float) -> str:
    s = f"{value:.6f}".rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    if float(s) != value:
        # keep the round trip exact for values needing more digits
        s = repr(float(value))
    return s


def dumps_instance(inst: UcInstance) -> str:
    lines = [
        "[meta]",
        f"name = {inst.name}",
        f"N = {inst.n_units}",
        f"T = {inst.n_periods}",
        "",
        "[units]",
        "# a b c pmin pmax rup rdn",
    ]
    for u in inst.units:
        lines.append(" ".join(_fmt(v) for v in (u.a, u.b, u.c, u.p_min, u.p_max, u.r_up, u.r_dn)))
    lines += ["", "[periods]", "# load reserve"]
    for load, res in zip(inst.loads, inst.reserves):
        lines.append(f"{_fmt(load)} {_fmt(res)}")
    return "\n".join(lines) + "\n"


def save_instance(inst: UcInstance, path) -> None:
    Path(path).write_text(dumps_instance(inst))


def _parse_float(tok, lineno, what):
    try:
        val = float(tok)
    except ValueError:
        raise InstanceParseError(f"{what}: cannot parse {tok!r} as a number", lineno) from None
    if not math.isfinite(val):
        raise InstanceParseError(f"{what}: non-finite value {tok!r}", lineno)
    return val


def loads_instance(text: str) -> UcInstance:
    """Parse the sectioned text format produced by :func:`dumps_instance`."""
    section = None
    meta = {}
    unit_rows = []
    period_rows = []
    unit_cols = ("a", "b", "c", "pmin", "pmax", "rup", "rdn")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("meta", "units", "periods"):
                raise InstanceParseError(f"unknown section [{section}]", lineno)
            continue
        if section is None:
            raise InstanceParseError("content before first section header", lineno)
        if section == "meta":
            if "=" not in line:
                raise InstanceParseError("expected 'key = value' in [meta]", lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            meta[key] = (value, lineno)
        elif section == "units":
            toks = line.split()
            if len(toks) != len(unit_cols):
                raise InstanceParseError(
                    f"unit row {len(unit_rows)}: expected {len(unit_cols)} columns, got {len(toks)}",
                    lineno,
                )
            unit_rows.append([
                _parse_float(tok, lineno, f"unit row {len(unit_rows)} column {col}")
                for tok, col in zip(toks, unit_cols)
            ])
        else:
            toks = line.split()
            if len(toks) != 2:
                raise InstanceParseError(
                    f"period row {len(period_rows)}: expected 'load reserve', got {len(toks)} fields",
                    lineno,
                )
            period_rows.append([
                _parse_float(tok, lineno, f"period row {len(period_rows)} column {col}")
                for tok, col in zip(toks, ("load", "reserve"))
            ])

    if "name" not in meta:
        raise InstanceParseError("[meta] is missing 'name'")
    name = meta["name"][0]
    for key, count in (("N", len(unit_rows)), ("T", len(period_rows))):
        if key in meta:
            value, lineno = meta[key]
            try:
                declared = int(value)
            except ValueError:
                raise InstanceParseError(f"{key}: expected an integer, got {value!r}", lineno) from None
            if declared != count:
                raise InstanceError(f"declared {key}={declared} but found {count} rows")
    units = [GeneratorUnit(*row) for row in unit_rows]
    return UcInstance(
        name=name,
        units=units,
        loads=[r[0] for r in period_rows],
        reserves=[r[1] for r in period_rows],
    )


def load_instance(path) -> UcInstance:
    return loads_instance(Path(path).read_text())


# ---------------------------------------------------------------------------
# synthesis of ramp / reserve data

def synthesize_large(base: UcInstance, up_pct: float, dn_pct: float,
                     reserve_pct: float, seed: int, name: str | None = None) -> UcInstance:
    """Resample ramp limits and reserves around fixed fractions.

    Ramp limits are drawn uniformly within +-5 percentage points of the
    target fraction of ``p_max`` and rounded to whole MW; reserves within
    +-0.5 points of the target fraction of each period's load.
    """
    if not (0 < up_pct < 1 and 0 < dn_pct < 1):
        raise ValueError("up_pct and dn_pct must lie in (0, 1)")
    if not 0 <= reserve_pct < 1:
        raise ValueError("reserve_pct must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    p_max = base.p_max
    r_up = np.round(p_max * rng.uniform(up_pct - 0.05, up_pct + 0.05, size=p_max.shape))
    r_dn = np.round(p_max * rng.uniform(dn_pct - 0.05, dn_pct + 0.05, size=p_max.shape))
    lo = max(reserve_pct - 0.005, 0.0)
    reserves = np.round(base.load * rng.uniform(lo, reserve_pct + 0.005, size=base.load.shape))
    units = [
        GeneratorUnit(u.a, u.b, u.c, u.p_min, u.p_max, max(float(ru), 1.0), max(float(rd), 1.0))
        for u, ru, rd in zip(base.units, r_up, r_dn)
    ]
    return UcInstance(
        name=name or f"{base.name}_synth{seed}",
        units=units,
        loads=base.loads,
        reserves=[float(r) for r in reserves],
    )


# ---------------------------------------------------------------------------
# built-in systems

_UC4B_UNITS = [
    (1000, 16.19, 0.00048, 150, 455, 80, 100),
    (700, 16.50, 0.00200, 20, 130, 15, 30),
    (450, 16.70, 0.00398, 25, 165, 30, 40),
    (370, 22.26, 0.00712, 20, 80, 5, 10),
]

_UC10_UNITS = [
    (660, 25.92, 0.00413, 10, 55, 80, 25),
    (670, 27.76, 0.00173, 10, 55, 20, 10),
    (700, 16.60, 0.00200, 20, 130, 20, 30),
    (680, 16.50, 0.00211, 20, 130, 40, 50),
    (450, 19.70, 0.00398, 25, 165, 35, 35),
    (970, 17.26, 0.00031, 150, 455, 50, 60),
    (480, 27.74, 0.00790, 25, 85, 15, 70),
    (665, 27.27, 0.00222, 10, 55, 80, 100),
    (1000, 16.19, 0.00048, 150, 455, 50, 80),
    (370, 22.26, 0.00712, 20, 80, 30, 40),
]

_UC12A_UNITS = _UC10_UNITS + [
    (490, 18.50, 0.00740, 50, 185, 70, 40),
    (735, 24.90, 0.00154, 120, 370, 60, 80),
]

_UC12B_UNITS = [
    (960, 20.40, 0.00287, 170, 355, 40, 75),
    (470, 29.80, 0.00788, 20, 55, 30, 60),
    (560, 28.50, 0.00646, 85, 400, 50, 40),
    (400, 15.90, 0.00057, 155, 360, 70, 35),
    (600, 27.90, 0.00260, 195, 430, 30, 85),
    (1000, 17.20, 0.00584, 200, 465, 40, 70),
    (900, 17.70, 0.00199, 100, 275, 70, 75),
    (910, 27.30, 0.00454, 65, 305, 80, 50),
    (830, 21.30, 0.00270, 15, 70, 60, 85),
    (750, 24.40, 0.00150, 160, 320, 100, 30),
    (860, 28.90, 0.00260, 30, 220, 50, 80),
    (980, 21.90, 0.00109, 60, 470, 70, 65),
]

# a, b, c, p_min, p_max shared by both 26-unit systems
_UC26_COST = [
    (24.3891, 25.55, 0.02533, 2.40, 12.00),
    (24.4110, 25.68, 0.02649, 2.40, 12.00),
    (24.6382, 25.80, 0.02801, 2.40, 12.00),
    (24.7605, 25.93, 0.02842, 2.40, 12.00),
    (24.8882, 26.06, 0.02855, 2.40, 12.00),
    (117.7550, 37.55, 0.01199, 4.00, 20.00),
    (118.1080, 37.66, 0.01261, 4.00, 20.00),
    (118.4580, 37.78, 0.01359, 4.00, 20.00),
    (118.8210, 37.89, 0.01433, 4.00, 20.00),
    (81.1364, 13.33, 0.00876, 15.20, 76.00),
    (81.2980, 13.36, 0.00895, 15.20, 76.00),
    (81.4641, 13.38, 0.00910, 15.20, 76.00),
    (81.6259, 13.41, 0.00932, 15.20, 76.00),
    (217.8950, 18.00, 0.00623, 25.00, 100.00),
    (218.3350, 18.10, 0.00612, 25.00, 100.00),
    (218.7750, 18.20, 0.00598, 25.00, 100.00),
    (142.7350, 10.69, 0.00463, 54.25, 155.00),
    (142.0290, 10.72, 0.00473, 54.25, 155.00),
    (143.3180, 10.74, 0.00481, 54.25, 155.00),
    (143.5970, 10.76, 0.00487, 54.25, 155.00),
    (259.1310, 23.00, 0.00259, 68.95, 197.00),
    (259.6490, 23.10, 0.00260, 68.95, 197.00),
    (260.1760, 23.20, 0.00263, 68.95, 197.00),
    (177.0580, 10.86, 0.00153, 140.00, 350.00),
    (310.0020, 7.49, 0.00194, 100.00, 400.00),
    (311.9100, 7.50, 0.00195, 100.00, 400.00),
]

_UC26A_RAMPS = (
    [(4, 5)] * 5 + [(6, 8)] * 4 + [(23, 28)] * 4 + [(30, 35)] * 3
    + [(47, 54)] * 4 + [(59, 69)] * 3 + [(105, 125), (120, 140), (120, 140)]
)
_UC26B_RAMPS = (
    [(2, 3)] * 5 + [(4, 5)] * 4 + [(15, 19)] * 4 + [(20, 25)] * 3
    + [(31, 39)] * 4 + [(39, 49)] * 3 + [(70, 88), (80, 100), (80, 100)]
)
_UC26_LOADS = [1700, 1730, 1690, 1700, 1750, 1850, 2000, 2430, 2540, 2600, 2670, 2590]
_UC26A_RESERVES = [51, 52, 51, 51, 52, 56, 60, 73, 76, 78, 80, 78]
_UC26B_RESERVES = [85, 86, 84, 85, 88, 92, 100, 122, 127, 130, 134, 130]

_BUILTIN_DATA = {
    "UC_4b": (_UC4B_UNITS, [650, 530, 450], [50, 25, 15]),
    "UC_10a": (_UC10_UNITS, [900, 1000, 1300], [20, 10, 30]),
    "UC_10b": (_UC10_UNITS, [1300, 1400, 1200], [20, 10, 30]),
    "UC_12a": (_UC12A_UNITS, [1500, 1350, 1450], [20, 10, 30]),
    "UC_12b": (_UC12B_UNITS, [2000, 2200, 2500], [50, 20, 40]),
    "UC_26a": (
        [c + r for c, r in zip(_UC26_COST, _UC26A_RAMPS)], _UC26_LOADS, _UC26A_RESERVES,
    ),
    "UC_26b": (
        [c + r for c, r in zip(_UC26_COST, _UC26B_RAMPS)], _UC26_LOADS, _UC26B_RESERVES,
    ),
}

BUILTIN_NAMES = tuple(_BUILTIN_DATA)

#: Published optimal costs used as reference values for the built-in systems.
REFERENCE_COSTS = {
    "UC_4b": 32417.47,
    "UC_10a": 69070.09,
    "UC_10b": 80447.49,
    "UC_12a": 88070.83,
    "UC_12b": 154974.96,
    "UC_26a": 312510.44,
    "UC_26b": 314692.81,
}


def builtin(name: str) -> UcInstance:
    """Return one of the bundled instances by name (e.g. ``"UC_4b"``)."""
    try:
        units, loads, reserves = _BUILTIN_DATA[name]
    except KeyError:
        raise UnknownInstanceError(
            f"unknown instance {name!r}; available: {', '.join(BUILTIN_NAMES)}"
        ) from None
    return UcInstance(
        name=name,
        units=[GeneratorUnit(*map(float, row)) for row in units],
        loads=loads,
        reserves=reserves,
    )


def resolve_instance(name) -> UcInstance:
    """Accept an instance, a built-in name, or a path to an instance file."""
    if isinstance(name, UcInstance):
        return name
    name = str(name)
    if name in _BUILTIN_DATA:
        return builtin(name)
    path = Path(name)
    if path.is_file():
        return load_instance(path)
    raise UnknownInstanceError(
        f"{name!r} is neither a built-in instance ({', '.join(BUILTIN_NAMES)}) nor a file"
    )
