"""FDP data model: instances, demand distributions, scenario builders, JSON I/O.

Demand sampling uses numpy's PCG64 bit generator (O'Neill's permuted
congruential generator, 128-bit state, 64-bit output) with the Ziggurat
standard-normal transform from ``numpy.random.Generator``.  A draw of
``count`` samples for a model of dimension ``n`` consumes exactly
``count * n`` standard normals in row-major order, so a given seed always
reproduces the same sample matrix.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DETERMINISTIC = "deterministic"
TRUNCATED_NORMAL = "truncated_independent_normal"
DEMAND_KINDS = (DETERMINISTIC, TRUNCATED_NORMAL)


class InstanceError(ValueError):
    """Base class for malformed instance data."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class SchemaError(InstanceError):
    pass


class DimensionError(InstanceError):
    pass


class NegativityError(InstanceError):
    pass


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DemandModel:
    kind: str
    mu: np.ndarray
    sigma: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.kind not in DEMAND_KINDS:
            raise SchemaError("demand.kind", f"unknown kind {self.kind!r}, expected one of {DEMAND_KINDS}")
        for name in ("mu", "sigma", "lower", "upper"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.mu.shape[0]
        for name in ("sigma", "lower", "upper"):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"demand.{name}", f"expected length {n}, got shape {getattr(self, name).shape}")
        if np.any(self.sigma < 0):
            raise NegativityError("demand.sigma", "standard deviations must be nonnegative")
        if np.any(self.lower > self.upper):
            raise SchemaError("demand.lower", "lower bound exceeds upper bound")

    @classmethod
    def create(cls, kind, mu, sigma=None, lower=None, upper=None) -> "DemandModel":
        mu = np.asarray(mu, dtype=float)
        sigma = np.zeros_like(mu) if sigma is None else np.asarray(sigma, dtype=float)
        if kind == DETERMINISTIC:
            sigma = np.zeros_like(mu)
        lower = np.zeros_like(mu) if lower is None else lower
        upper = mu + 2.0 * sigma if upper is None else upper
        return cls(kind, mu, sigma, lower, upper)

    @classmethod
    def deterministic(cls, mu) -> "DemandModel":
        return cls.create(DETERMINISTIC, mu)

    @classmethod
    def truncated_normal(cls, mu, sigma) -> "DemandModel":
        """Independent normals clamped to ``[0, mu + 2 sigma]``."""
        return cls.create(TRUNCATED_NORMAL, mu, sigma)

    @property
    def n(self) -> int:
        return int(self.mu.shape[0])

    def __eq__(self, other):
        if not isinstance(other, DemandModel):
            return NotImplemented
        return self.kind == other.kind and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in ("mu", "sigma", "lower", "upper")
        )


@dataclass(frozen=True, eq=False)
class Instance:
    capacities: np.ndarray
    demand_model: DemandModel
    unit_profit: np.ndarray
    arc_cost: np.ndarray
    budget: int

    def __post_init__(self):
        object.__setattr__(self, "capacities", _frozen(self.capacities))
        object.__setattr__(self, "unit_profit", _frozen(self.unit_profit))
        object.__setattr__(self, "arc_cost", _frozen(self.arc_cost))
        m, n = self.capacities.shape[0], self.demand_model.n
        if self.capacities.ndim != 1 or m < 1:
            raise DimensionError("capacities", "must be a nonempty vector")
        if n < 1:
            raise DimensionError("demand.mu", "must be a nonempty vector")
        for name in ("unit_profit", "arc_cost"):
            if getattr(self, name).shape != (m, n):
                raise DimensionError(name, f"expected shape {(m, n)}, got {getattr(self, name).shape}")
        if np.any(self.capacities < 0):
            raise NegativityError("capacities", "capacities must be nonnegative")
        if np.any(self.arc_cost < 0):
            raise NegativityError("arc_cost", "installation costs must be nonnegative")
        if not np.all(np.isfinite(self.unit_profit)):
            raise SchemaError("unit_profit", "entries must be finite")
        if int(self.budget) != self.budget or self.budget < 1:
            raise SchemaError("budget", f"must be a positive integer, got {self.budget!r}")
        budget = int(self.budget)
        if budget > m * n:
            warnings.warn(f"budget {budget} exceeds m*n={m * n}; clamped", stacklevel=3)
            budget = m * n
        object.__setattr__(self, "budget", budget)

    @property
    def m(self) -> int:
        return int(self.capacities.shape[0])

    @property
    def n(self) -> int:
        return self.demand_model.n

    @property
    def shape(self) -> tuple[int, int]:
        return self.m, self.n

    def with_budget(self, budget: int) -> "Instance":
        return Instance(self.capacities, self.demand_model, self.unit_profit, self.arc_cost, budget)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.budget == other.budget
            and self.demand_model == other.demand_model
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("capacities", "unit_profit", "arc_cost"))
        )

    def to_dict(self) -> dict:
        dm = self.demand_model
        return {
            "m": self.m,
            "n": self.n,
            "capacities": self.capacities.tolist(),
            "demand": {
                "kind": dm.kind,
                "mu": dm.mu.tolist(),
                "sigma": dm.sigma.tolist(),
                "lower": dm.lower.tolist(),
                "upper": dm.upper.tolist(),
            },
            "unit_profit": self.unit_profit.tolist(),
            "arc_cost": self.arc_cost.tolist(),
            "budget": self.budget,
        }

    def digest(self) -> str:
        """Short content hash used in run manifests."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FlexNetwork:
    """Binary arc-selection matrix; ``arcs[i, j]`` means resource i may serve demand j."""

    arcs: np.ndarray
    arc_count: int = field(init=False)

    def __post_init__(self):
        arcs = np.asarray(self.arcs)
        if arcs.ndim != 2:
            raise DimensionError("arcs", "network must be an m x n matrix")
        if not np.all((arcs == 0) | (arcs == 1)):
            raise SchemaError("arcs", "entries must be 0 or 1")
        object.__setattr__(self, "arcs", _frozen(arcs, dtype=np.int8))
        object.__setattr__(self, "arc_count", int(self.arcs.sum()))

    @classmethod
    def empty(cls, m: int, n: int) -> "FlexNetwork":
        return cls(np.zeros((m, n), dtype=np.int8))

    @classmethod
    def full(cls, m: int, n: int) -> "FlexNetwork":
        return cls(np.ones((m, n), dtype=np.int8))

    @classmethod
    def from_arcs(cls, m: int, n: int, arcs) -> "FlexNetwork":
        F = np.zeros((m, n), dtype=np.int8)
        for i, j in arcs:
            F[i, j] = 1
        return cls(F)

    @property
    def shape(self) -> tuple[int, int]:
        return self.arcs.shape

    def arc_list(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.arcs))]

    def with_arc(self, i: int, j: int, value: int = 1) -> "FlexNetwork":
        F = self.arcs.copy()
        F[i, j] = value
        return FlexNetwork(F)

    def __eq__(self, other):
        if not isinstance(other, FlexNetwork):
            return NotImplemented
        return np.array_equal(self.arcs, other.arcs)

    def __hash__(self):
        return hash(self.arcs.tobytes())


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Demand realizations, one row per sample, generated from ``seed``."""

    demands: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "demands", _frozen(np.atleast_2d(self.demands)))

    def __len__(self):
        return int(self.demands.shape[0])

    @property
    def count(self) -> int:
        return len(self)

    @property
    def samples(self) -> list[np.ndarray]:
        return list(self.demands)

    def head(self, omega: int) -> np.ndarray:
        if omega > len(self):
            raise ValueError(f"need {omega} samples, set holds only {len(self)}")
        return self.demands[:omega]

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.demands, other.demands)


def draw_demands(model: DemandModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` clamped-normal demand vectors from an existing generator."""
    z = rng.standard_normal((count, model.n))
    d = model.mu + model.sigma * z
    return np.clip(d, model.lower, model.upper)


def sample_demand(model: DemandModel, rng_seed: int, count: int) -> SampleSet:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    return SampleSet(draw_demands(model, rng, count), int(rng_seed))


AUTO_CAPACITIES = [380, 230, 250, 230, 240, 230, 230, 240]
AUTO_MEANS = [320, 150, 270, 110, 220, 110, 120, 80, 140, 160, 60, 35, 40, 35, 30, 180]

FASHION_MEANS = [1017, 1042, 1358, 2525, 1100, 2150, 1113, 4017, 3296, 2383]
FASHION_SIGMAS = [194, 323, 248, 340, 381, 404, 524, 556, 1047, 697]
FASHION_PRICES = [110, 99, 80, 90, 123, 173, 133, 73, 93, 148]
FASHION_MARGIN = 0.24


def build_auto_scenario(budget: int = 16) -> Instance:
    """Eight plants, sixteen vehicle models, unit profits and free arcs."""
    mu = np.array(AUTO_MEANS, dtype=float)
    m, n = len(AUTO_CAPACITIES), len(mu)
    return Instance(
        capacities=np.array(AUTO_CAPACITIES, dtype=float),
        demand_model=DemandModel.truncated_normal(mu, 0.8 * mu),
        unit_profit=np.ones((m, n)),
        arc_cost=np.zeros((m, n)),
        budget=budget,
    )


def build_fashion_scenario(budget: int = 10) -> Instance:
    mu = np.array(FASHION_MEANS, dtype=float)
    q = np.array(FASHION_PRICES, dtype=float)
    n = len(mu)
    return Instance(
        capacities=mu.copy(),
        demand_model=DemandModel.truncated_normal(mu, np.array(FASHION_SIGMAS, dtype=float)),
        unit_profit=np.tile(FASHION_MARGIN * q, (n, 1)),
        arc_cost=np.zeros((n, n)),
        budget=budget,
    )


def fctp_to_fdp(capacities, demands, transport_cost, fixed_charge, budget: int | None = None) -> Instance:
    """Turn a fixed-charge transportation instance into an FDP.

    Unit profit is ``P - t_ij`` where ``P = max(I_ij + t_ij)``; demand becomes
    a clamped normal around the FCTP demands with a 0.8 coefficient of variation.
    """
    c = np.asarray(capacities, dtype=float)
    mu = np.asarray(demands, dtype=float)
    t = np.asarray(transport_cost, dtype=float)
    fixed = np.asarray(fixed_charge, dtype=float)
    if c.ndim != 1 or mu.ndim != 1:
        raise DimensionError("capacities" if c.ndim != 1 else "demands", "must be a vector")
    shape = (c.shape[0], mu.shape[0])
    if t.shape != shape:
        raise DimensionError("transport_cost", f"expected shape {shape}, got {t.shape}")
    if fixed.shape != shape:
        raise DimensionError("fixed_charge", f"expected shape {shape}, got {fixed.shape}")
    for name, arr in (("capacities", c), ("demands", mu), ("transport_cost", t), ("fixed_charge", fixed)):
        if np.any(arr < 0):
            raise NegativityError(name, "entries must be nonnegative")
    p_const = float(np.max(fixed + t))
    return Instance(
        capacities=c,
        demand_model=DemandModel.truncated_normal(mu, 0.8 * mu),
        unit_profit=p_const - t,
        arc_cost=fixed,
        budget=shape[0] * shape[1] if budget is None else budget,
    )


def build_random_instance(m: int = 4, n: int = 4, budget: int = 5, seed: int = 0) -> Instance:
    """Synthetic instance with uniform capacities, means, profits and arc costs.

    Demand is a clamped normal with coefficient of variation 0.5.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    capacities = rng.uniform(50.0, 150.0, m)
    mu = rng.uniform(50.0, 150.0, n)
    unit_profit = rng.uniform(1.0, 3.0, (m, n))
    arc_cost = rng.uniform(0.0, 30.0, (m, n))
    return Instance(capacities, DemandModel.truncated_normal(mu, 0.5 * mu), unit_profit, arc_cost, budget)


def build_synthetic_scenario(budget: int = 5) -> Instance:
    return build_random_instance(4, 4, budget, seed=0)


SCENARIOS = {"auto": build_auto_scenario, "fashion": build_fashion_scenario, "synthetic": build_synthetic_scenario}


def _vector(obj, key, length, prefix=""):
    name = prefix + key
    if key not in obj:
        raise SchemaError(name, "missing required field")
    val = obj[key]
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
        raise SchemaError(name, "expected a list of numbers")
    if len(val) != length:
        raise DimensionError(name, f"expected length {length}, got {len(val)}")
    return np.array(val, dtype=float)


def _matrix(obj, key, m, n):
    if key not in obj:
        raise SchemaError(key, "missing required field")
    rows = obj[key]
    if not isinstance(rows, list):
        raise SchemaError(key, "expected a list of rows")
    if len(rows) != m:
        raise DimensionError(key, f"expected {m} rows, got {len(rows)}")
    out = np.empty((m, n))
    for i, row in enumerate(rows):
        out[i] = _vector({key: row}, key, n)
    return out


def instance_from_dict(obj: dict) -> Instance:
    if not isinstance(obj, dict):
        raise SchemaError("<root>", "expected a JSON object")
    for key in ("m", "n", "budget"):
        if key not in obj:
            raise SchemaError(key, "missing required field")
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise SchemaError(key, "expected an integer")
    m, n = obj["m"], obj["n"]
    if m < 1 or n < 1:
        raise DimensionError("m" if m < 1 else "n", "must be >= 1")
    capacities = _vector(obj, "capacities", m)
    if "demand" not in obj or not isinstance(obj["demand"], dict):
        raise SchemaError("demand", "missing or not an object")
    dem = obj["demand"]
    kind = dem.get("kind")
    if kind not in DEMAND_KINDS:
        raise SchemaError("demand.kind", f"expected one of {DEMAND_KINDS}, got {kind!r}")
    mu = _vector(dem, "mu", n, "demand.")
    sigma = _vector(dem, "sigma", n, "demand.")
    lower = _vector(dem, "lower", n, "demand.") if "lower" in dem else None
    upper = _vector(dem, "upper", n, "demand.") if "upper" in dem else None
    unit_profit = _matrix(obj, "unit_profit", m, n)
    arc_cost = _matrix(obj, "arc_cost", m, n)
    if np.any(capacities < 0):
        raise NegativityError("capacities", "capacities must be nonnegative")
    if np.any(arc_cost < 0):
        raise NegativityError("arc_cost", "installation costs must be nonnegative")
    if kind == DETERMINISTIC and np.any(sigma != 0):
        raise SchemaError("demand.sigma", "deterministic demand requires zero sigma")
    model = DemandModel.create(kind, mu, sigma, lower, upper)
    return Instance(capacities, model, unit_profit, arc_cost, obj["budget"])


def save_instance(instance: Instance, path) -> Path:
    path = Path(path)
    # json writes floats with repr(), which round-trips IEEE-754 doubles exactly
    path.write_text(json.dumps(instance.to_dict(), indent=1))
    return path


def load_instance(path) -> Instance:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON: {exc}") from exc
    return instance_from_dict(obj)
