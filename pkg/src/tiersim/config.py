"""YAML run configuration: parsing, validation, canonical serialization.

Every mapping is checked against its allowed keys so typos fail loudly with
the offending key named. ``serialize_config`` emits a canonical form whose
re-parse equals the original Config, and whose hash fingerprints a run.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any

import yaml

from .demand import (
    DemandComponent,
    DemandSpec,
    DiscountFunction,
    Distribution,
    Geometric,
    LoadSchedule,
    Normal,
    Point,
    Region,
    Tabulated,
    Uniform,
)
from .mechanisms import TieredParams, eip1559_params
from .policy import DiversityPolicy, PolicyClause
from .sim import SimConfig


class ConfigError(Exception):
    """A configuration file problem; the message names the offending key."""


@dataclass(frozen=True)
class RegionRef:
    blocks: int
    rate: float
    demand: str


@dataclass(frozen=True)
class PolicySettings:
    policy: DiversityPolicy
    warmup_blocks: int = 500
    sample_blocks: int = 1000


@dataclass(frozen=True)
class SolveSettings:
    sizes: tuple[float, ...]
    delays: tuple[int, ...]
    rate: float
    demand: str
    tolerance: float | None = None
    max_iterations: int = 2000
    method: str = "auto"
    samples: int = 100_000


@dataclass(frozen=True)
class Config:
    mechanism: str
    seed: int
    throughput: float
    initial_price: float
    params: TieredParams
    demands: tuple[tuple[str, DemandSpec], ...]
    arrival_model: str
    regions: tuple[RegionRef, ...] | None
    policy: PolicySettings | None
    solve: SolveSettings | None

    def demand_spec(self, name: str) -> DemandSpec:
        for key, spec in self.demands:
            if key == name:
                return spec
        raise ConfigError(f"unknown demand spec {name!r}")

    def schedule(self) -> LoadSchedule:
        if not self.regions:
            raise ConfigError("config has no load.regions section")
        regions = tuple(Region(r.blocks, r.rate, self.demand_spec(r.demand)) for r in self.regions)
        return LoadSchedule(regions, self.arrival_model)

    def sim_config(self) -> SimConfig:
        return SimConfig(
            params=self.params,
            throughput=self.throughput,
            schedule=self.schedule(),
            seed=self.seed,
            initial_price=self.initial_price,
        )


# ---------------------------------------------------------------------------
# parsing helpers


def _check_keys(mapping: dict, allowed: set[str], context: str) -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{context} must be a mapping")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {context}.{key}")


def _need(mapping: dict, key: str, context: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"missing key {context}.{key}")
    return mapping[key]


def _number(value: Any, context: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{context} must be a number")
    return float(value)


def _integer(value: Any, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{context} must be an integer")
    return value


def _pair(value: Any, context: str) -> tuple[float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{context} must be a two-element list")
    return _number(value[0], f"{context}[0]"), _number(value[1], f"{context}[1]")


def _parse_dist(node: Any, context: str) -> Distribution:
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError(f"{context} must be one of uniform/normal/point")
    kind, value = next(iter(node.items()))
    try:
        if kind == "uniform":
            return Uniform(*_pair(value, context))
        if kind == "normal":
            return Normal(*_pair(value, context))
        if kind == "point":
            return Point(_number(value, context))
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    raise ConfigError(f"unknown distribution {context}.{kind}")


def _parse_discount(node: Any, context: str) -> DiscountFunction:
    if not isinstance(node, dict) or len(node) != 1:
        raise ConfigError(f"{context} must be one of geometric/tabulated")
    kind, value = next(iter(node.items()))
    try:
        if kind == "geometric":
            return Geometric(_number(value, context))
        if kind == "tabulated":
            if not isinstance(value, list) or not all(
                isinstance(p, (list, tuple)) and len(p) == 2 for p in value
            ):
                raise ConfigError(f"{context}.tabulated must be a list of [delay, factor] pairs")
            return Tabulated(tuple((int(d), float(f)) for d, f in value))
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc
    raise ConfigError(f"unknown discount {context}.{kind}")


def _parse_component(node: Any, context: str) -> DemandComponent:
    _check_keys(node, {"weight", "v0", "urgency", "discount"}, context)
    kwargs: dict[str, Any] = {
        "weight": _number(_need(node, "weight", context), f"{context}.weight"),
        "v0": _parse_dist(_need(node, "v0", context), f"{context}.v0"),
    }
    if "urgency" in node:
        kwargs["urgency"] = _parse_dist(node["urgency"], f"{context}.urgency")
    if "discount" in node:
        kwargs["discount"] = _parse_discount(node["discount"], f"{context}.discount")
    try:
        return DemandComponent(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


_TIERED_KEYS = {
    "k", "tier_fractions", "delay_factors", "price_factors",
    "delay_update_every", "tier_update_every", "p_decrease",
    "add_tier_price", "remove_tier_price", "new_tier_price",
    "target_load", "max_fill_factor", "min_price", "min_tier1_fraction",
}


def _parse_tiered(node: dict, context: str) -> TieredParams:
    _check_keys(node, _TIERED_KEYS, context)
    fractions = _need(node, "tier_fractions", context)
    if not isinstance(fractions, list):
        raise ConfigError(f"{context}.tier_fractions must be a list")
    kwargs: dict[str, Any] = {
        "k": _integer(_need(node, "k", context), f"{context}.k"),
        "a": tuple(_number(x, f"{context}.tier_fractions") for x in fractions),
        "lam": tuple(_number(x, f"{context}.delay_factors") for x in node.get("delay_factors", [])),
        "mu": tuple(_number(x, f"{context}.price_factors") for x in node.get("price_factors", [])),
    }
    renames = {
        "delay_update_every": "d_freq",
        "tier_update_every": "t_freq",
    }
    for key in ("delay_update_every", "tier_update_every"):
        if key in node:
            kwargs[renames[key]] = _integer(node[key], f"{context}.{key}")
    for key in ("p_decrease", "add_tier_price", "remove_tier_price", "new_tier_price",
                "target_load", "max_fill_factor", "min_price", "min_tier1_fraction"):
        if key in node:
            kwargs[key] = _number(node[key], f"{context}.{key}")
    try:
        return TieredParams(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


_TOP_KEYS = {
    "mechanism", "seed", "throughput", "initial_price",
    "tiered", "eip1559", "demand", "load", "policy", "solve",
}


def parse_config(text: str) -> Config:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"not valid YAML: {exc}") from exc
    return parse_raw(raw)


def parse_raw(raw: Any) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config")
    mechanism = raw.get("mechanism", "tiered")
    if mechanism not in ("tiered", "eip1559"):
        raise ConfigError(f"config.mechanism must be tiered or eip1559, got {mechanism!r}")
    seed = _integer(_need(raw, "seed", "config"), "config.seed")
    throughput = _number(_need(raw, "throughput", "config"), "config.throughput")
    initial_price = _number(raw.get("initial_price", 1.0), "config.initial_price")

    if mechanism == "tiered":
        params = _parse_tiered(_need(raw, "tiered", "config"), "tiered")
        if "eip1559" in raw:
            raise ConfigError("unknown key config.eip1559 (mechanism is tiered)")
    else:
        node = raw.get("eip1559", {})
        _check_keys(node, {"target_load", "max_fill_factor", "min_price"}, "eip1559")
        try:
            params = eip1559_params(
                target_load=_number(node.get("target_load", 1.0), "eip1559.target_load"),
                max_fill_factor=_number(node.get("max_fill_factor", 2.0), "eip1559.max_fill_factor"),
                min_price=_number(node.get("min_price", 0.0), "eip1559.min_price"),
            )
        except ValueError as exc:
            raise ConfigError(f"eip1559: {exc}") from exc
        if "tiered" in raw:
            raise ConfigError("unknown key config.tiered (mechanism is eip1559)")

    demand_node = _need(raw, "demand", "config")
    if not isinstance(demand_node, dict) or not demand_node:
        raise ConfigError("config.demand must map spec names to component lists")
    demands = []
    for name in sorted(demand_node):
        comps = demand_node[name]
        if not isinstance(comps, list) or not comps:
            raise ConfigError(f"demand.{name} must be a non-empty list of components")
        parsed = tuple(
            _parse_component(c, f"demand.{name}[{i}]") for i, c in enumerate(comps)
        )
        try:
            demands.append((name, DemandSpec(parsed)))
        except ValueError as exc:
            raise ConfigError(f"demand.{name}: {exc}") from exc

    regions = None
    arrival_model = "deterministic"
    if "load" in raw:
        node = raw["load"]
        _check_keys(node, {"arrivals", "regions"}, "load")
        arrival_model = node.get("arrivals", "deterministic")
        if arrival_model not in ("deterministic", "poisson"):
            raise ConfigError(f"load.arrivals must be deterministic or poisson, got {arrival_model!r}")
        region_list = _need(node, "regions", "load")
        if not isinstance(region_list, list) or not region_list:
            raise ConfigError("load.regions must be a non-empty list")
        parsed_regions = []
        for i, rnode in enumerate(region_list):
            ctx = f"load.regions[{i}]"
            _check_keys(rnode, {"blocks", "rate", "demand"}, ctx)
            name = _need(rnode, "demand", ctx)
            if not any(key == name for key, _ in demands):
                raise ConfigError(f"{ctx}.demand references unknown spec {name!r}")
            parsed_regions.append(RegionRef(
                blocks=_integer(_need(rnode, "blocks", ctx), f"{ctx}.blocks"),
                rate=_number(_need(rnode, "rate", ctx), f"{ctx}.rate"),
                demand=name,
            ))
        regions = tuple(parsed_regions)

    policy = None
    if "policy" in raw:
        node = raw["policy"]
        _check_keys(node, {"clauses", "warmup_blocks", "sample_blocks"}, "policy")
        clause_list = _need(node, "clauses", "policy")
        if not isinstance(clause_list, list) or not clause_list:
            raise ConfigError("policy.clauses must be a non-empty list")
        clauses = []
        for i, cnode in enumerate(clause_list):
            ctx = f"policy.clauses[{i}]"
            _check_keys(cnode, {"share", "delay", "price"}, ctx)
            try:
                clauses.append(PolicyClause(
                    share=_number(_need(cnode, "share", ctx), f"{ctx}.share"),
                    delay=_number(_need(cnode, "delay", ctx), f"{ctx}.delay"),
                    price=_number(_need(cnode, "price", ctx), f"{ctx}.price"),
                ))
            except ValueError as exc:
                raise ConfigError(f"{ctx}: {exc}") from exc
        policy = PolicySettings(
            policy=DiversityPolicy(tuple(clauses)),
            warmup_blocks=_integer(node.get("warmup_blocks", 500), "policy.warmup_blocks"),
            sample_blocks=_integer(node.get("sample_blocks", 1000), "policy.sample_blocks"),
        )

    solve = None
    if "solve" in raw:
        node = raw["solve"]
        _check_keys(node, {"sizes", "delays", "rate", "demand", "tolerance",
                           "max_iterations", "method", "samples"}, "solve")
        name = _need(node, "demand", "solve")
        if not any(key == name for key, _ in demands):
            raise ConfigError(f"solve.demand references unknown spec {name!r}")
        sizes = _need(node, "sizes", "solve")
        delays = _need(node, "delays", "solve")
        if not isinstance(sizes, list) or not isinstance(delays, list):
            raise ConfigError("solve.sizes and solve.delays must be lists")
        method = node.get("method", "auto")
        if method not in ("auto", "analytic", "sample"):
            raise ConfigError(f"solve.method must be auto/analytic/sample, got {method!r}")
        tolerance = node.get("tolerance")
        solve = SolveSettings(
            sizes=tuple(_number(x, "solve.sizes") for x in sizes),
            delays=tuple(_integer(x, "solve.delays") for x in delays),
            rate=_number(_need(node, "rate", "solve"), "solve.rate"),
            demand=name,
            tolerance=None if tolerance is None else _number(tolerance, "solve.tolerance"),
            max_iterations=_integer(node.get("max_iterations", 2000), "solve.max_iterations"),
            method=method,
            samples=_integer(node.get("samples", 100_000), "solve.samples"),
        )

    return Config(
        mechanism=mechanism,
        seed=seed,
        throughput=throughput,
        initial_price=initial_price,
        params=params,
        demands=tuple(demands),
        arrival_model=arrival_model,
        regions=regions,
        policy=policy,
        solve=solve,
    )


def load_config(path) -> Config:
    with open(path) as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------------------
# canonical serialization


def _dump_dist(dist: Distribution) -> dict:
    if isinstance(dist, Uniform):
        return {"uniform": [dist.lo, dist.hi]}
    if isinstance(dist, Normal):
        return {"normal": [dist.mean, dist.sd]}
    return {"point": dist.value}


def _dump_discount(h: DiscountFunction) -> dict:
    if isinstance(h, Geometric):
        return {"geometric": h.urgency}
    return {"tabulated": [[d, f] for d, f in h.points]}


def serialize_config(cfg: Config) -> str:
    """Canonical YAML: re-parsing it reproduces ``cfg`` exactly."""
    out: dict[str, Any] = {
        "mechanism": cfg.mechanism,
        "seed": cfg.seed,
        "throughput": cfg.throughput,
        "initial_price": cfg.initial_price,
    }
    p = cfg.params
    if cfg.mechanism == "tiered":
        tiered: dict[str, Any] = {
            "k": p.k,
            "tier_fractions": list(p.a),
            "delay_factors": list(p.lam),
            "price_factors": list(p.mu),
            "delay_update_every": p.d_freq,
            "tier_update_every": p.t_freq,
            "p_decrease": p.p_decrease,
            "add_tier_price": p.add_tier_price,
            "remove_tier_price": p.remove_tier_price,
            "target_load": p.target_load,
            "max_fill_factor": p.max_fill_factor,
            "min_price": p.min_price,
            "min_tier1_fraction": p.min_tier1_fraction,
        }
        if p.new_tier_price is not None:
            tiered["new_tier_price"] = p.new_tier_price
        out["tiered"] = tiered
    else:
        out["eip1559"] = {
            "target_load": p.target_load,
            "max_fill_factor": p.max_fill_factor,
            "min_price": p.min_price,
        }
    demand: dict[str, Any] = {}
    for name, spec in cfg.demands:
        comps = []
        for c in spec.components:
            node: dict[str, Any] = {"weight": c.weight, "v0": _dump_dist(c.v0)}
            if c.urgency is not None:
                node["urgency"] = _dump_dist(c.urgency)
            else:
                node["discount"] = _dump_discount(c.discount)
            comps.append(node)
        demand[name] = comps
    out["demand"] = demand
    if cfg.regions is not None:
        out["load"] = {
            "arrivals": cfg.arrival_model,
            "regions": [
                {"blocks": r.blocks, "rate": r.rate, "demand": r.demand} for r in cfg.regions
            ],
        }
    if cfg.policy is not None:
        out["policy"] = {
            "clauses": [
                {"share": c.share, "delay": c.delay, "price": c.price}
                for c in cfg.policy.policy.clauses
            ],
            "warmup_blocks": cfg.policy.warmup_blocks,
            "sample_blocks": cfg.policy.sample_blocks,
        }
    if cfg.solve is not None:
        s = cfg.solve
        node = {
            "sizes": list(s.sizes),
            "delays": list(s.delays),
            "rate": s.rate,
            "demand": s.demand,
            "max_iterations": s.max_iterations,
            "method": s.method,
            "samples": s.samples,
        }
        if s.tolerance is not None:
            node["tolerance"] = s.tolerance
        out["solve"] = node
    return yaml.safe_dump(out, sort_keys=True, default_flow_style=False)


def fingerprint(cfg: Config) -> str:
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def apply_override(raw: Any, dotted_key: str, value: Any) -> None:
    """Set a nested raw-config entry by dotted path (lists indexed by number)."""
    parts = dotted_key.split(".")
    node = raw
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, list):
            try:
                idx = int(part)
                node[idx]
            except (ValueError, IndexError) as exc:
                raise ConfigError(f"unknown parameter key {dotted_key!r}") from exc
            if last:
                node[idx] = value
            else:
                node = node[idx]
        elif isinstance(node, dict):
            if part not in node:
                raise ConfigError(f"unknown parameter key {dotted_key!r}")
            if last:
                node[part] = value
            else:
                node = node[part]
        else:
            raise ConfigError(f"unknown parameter key {dotted_key!r}")
