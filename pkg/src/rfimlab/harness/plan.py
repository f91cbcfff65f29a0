"""Experiment plans: JSON documents describing a grid of quenched ensembles.

A plan is validated into an ExperimentPlan or a list of diagnostics, each
naming the offending key.  ``to_document`` gives the normalized form with
every default spelled out; validating it again returns the same document.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from ..disorder import FieldProfile, ZetaDistribution
from ..errors import RfimError
from ..exact import ENUMERATION_CAP, REPLICA_BUDGET
from ..lattice import MAX_VOLUME
from ..mcmc import SamplerConfig
from ..replicas import ClippedOverlapFunction, parse_overlap_function

ENGINE_KINDS = ("exact", "transfer-matrix", "mcmc", "auto")
OBSERVABLES = ("overlap-variance", "gg-residual", "delta-self-averaging", "q-consistency", "fkg-scan",
               "ibp-suite", "var-Fn-scaling", "constant")
FORMATS = ("csv", "json")
TOP_KEYS = {"name", "grid", "disorder", "engine", "observables", "output", "seed_base"}


@dataclass(frozen=True)
class Diagnostic:
    key: str
    message: str

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


@dataclass(frozen=True)
class ObservableSpec:
    name: str
    params: tuple[tuple[str, Any], ...] = ()

    def get(self, key: str, default=None):
        return dict(self.params).get(key, default)

    @property
    def label(self) -> str:
        """Row and file name; only the replica function distinguishes entries of one name."""
        if self.name == "gg-residual":
            return f"gg-residual(m={self.get('m')},f={self.get('f')})"
        return self.name

    def to_document(self) -> dict:
        return {"name": self.name, **dict(self.params)}


@dataclass(frozen=True)
class Cell:
    index: int
    d: int
    n: int
    beta: float
    h: float
    dist: ZetaDistribution
    engine: str
    seeds: tuple[int, ...] = field(repr=False)

    @property
    def label(self) -> str:
        return f"d={self.d} n={self.n} beta={self.beta:g} h={self.h:g} dist={self.dist.name}"

    @property
    def group(self) -> tuple:
        """Cells differing only in n form one trend ladder."""
        return (self.d, self.beta, self.h, self.dist.name)


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    grid: dict[str, tuple]
    profile: FieldProfile
    dists: tuple[ZetaDistribution, ...]
    seed_start: int
    seed_count: int
    shared_seeds: bool
    engine: str
    cap: int
    sampler: SamplerConfig
    observables: tuple[ObservableSpec, ...]
    formats: tuple[str, ...]
    seed_base: int = 0

    @property
    def cells(self) -> list[Cell]:
        out = []
        combos = itertools.product(self.grid["d"], self.grid["n"], self.grid["beta"], self.grid["h"], self.dists)
        for k, (d, n, beta, h, dist) in enumerate(combos):
            start = self.seed_base + self.seed_start + (0 if self.shared_seeds else k * self.seed_count)
            out.append(Cell(k, d, n, beta, h, dist, resolve_engine(self.engine, d, n, self.cap),
                            tuple(range(start, start + self.seed_count))))
        return out

    def with_seed_base(self, seed_base: int) -> "ExperimentPlan":
        return ExperimentPlan(**{**self.__dict__, "seed_base": int(seed_base)})

    def to_document(self) -> dict:
        return {
            "name": self.name,
            "grid": {k: list(v) for k, v in self.grid.items()},
            "disorder": {
                "profile": self.profile.to_dict(),
                "dists": [d.to_dict() for d in self.dists],
                "seeds": {"start": self.seed_start, "count": self.seed_count, "shared": self.shared_seeds},
            },
            "engine": {"kind": self.engine, "cap": self.cap, "sampler": self.sampler.to_dict()},
            "observables": [o.to_document() for o in self.observables],
            "output": {"formats": list(self.formats)},
            "seed_base": self.seed_base,
        }


def resolve_engine(kind: str, d: int, n: int, cap: int) -> str:
    if kind != "auto":
        return kind
    return "exact" if n**d <= cap else "mcmc"


class PlanError(RfimError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


def _list(diags, doc, key, path, kind, positive=True):
    vals = doc.get(key)
    if not isinstance(vals, list) or not vals:
        diags.append(Diagnostic(f"{path}.{key}", "must be a non-empty list"))
        return ()
    out = []
    for i, v in enumerate(vals):
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        if kind is int:
            ok = ok and float(v).is_integer()
        if not ok or (positive and not v > 0):
            diags.append(Diagnostic(f"{path}.{key}[{i}]", f"must be a positive {'integer' if kind is int else 'number'}, got {v!r}"))
            continue
        out.append(kind(v))
    return tuple(out)


def _observable(diags, i, item) -> ObservableSpec | None:
    key = f"observables[{i}]"
    if isinstance(item, str):
        item = {"name": item}
    if not isinstance(item, dict) or "name" not in item:
        diags.append(Diagnostic(key, "must be a name or an object with a 'name'"))
        return None
    name = item["name"]
    if name not in OBSERVABLES:
        diags.append(Diagnostic(f"{key}.name", f"unknown observable {name!r}; expected one of {OBSERVABLES}"))
        return None
    params = {k: v for k, v in item.items() if k != "name"}
    allowed = {"gg-residual": {"m", "f"}, "constant": {"value"}, "delta-self-averaging": {"step"},
               "q-consistency": {"step"}, "var-Fn-scaling": {"factor"}, "ibp-suite": {"mc_samples"}}.get(name, set())
    for k in sorted(set(params) - allowed):
        diags.append(Diagnostic(f"{key}.{k}", f"unknown parameter for {name}"))
    if name == "gg-residual":
        params.setdefault("m", 3)
        params.setdefault("f", "R23")
        if not isinstance(params["m"], int) or params["m"] < 2:
            diags.append(Diagnostic(f"{key}.m", f"replica count m must be an integer >= 2, got {params['m']!r}"))
        try:
            f = parse_overlap_function(str(params["f"]))
            if isinstance(params["m"], int) and f.n_replicas > params["m"]:
                diags.append(Diagnostic(f"{key}.f", f"{params['f']} uses replica {f.n_replicas} but m = {params['m']}"))
        except RfimError as exc:
            diags.append(Diagnostic(f"{key}.f", str(exc)))
    if name == "constant":
        params.setdefault("value", 1.0)
        if not isinstance(params["value"], (int, float)):
            diags.append(Diagnostic(f"{key}.value", "must be a number"))
        else:
            params["value"] = float(params["value"])
    if name in ("delta-self-averaging", "q-consistency"):
        params.setdefault("step", 1e-4)
        if not isinstance(params["step"], (int, float)) or not params["step"] > 0:
            diags.append(Diagnostic(f"{key}.step", "finite-difference step must be > 0"))
    if name == "var-Fn-scaling":
        params.setdefault("factor", 4.0)
    if name == "ibp-suite":
        params.setdefault("mc_samples", 20000)
    return ObservableSpec(name, tuple(sorted(params.items())))


def _parse(doc: Any) -> tuple[ExperimentPlan | None, list[Diagnostic]]:
    diags: list[Diagnostic] = []
    if not isinstance(doc, dict):
        return None, [Diagnostic("<document>", "plan must be a JSON object")]
    for k in sorted(set(doc) - TOP_KEYS):
        diags.append(Diagnostic(k, "unknown top-level key"))

    grid_doc = doc.get("grid")
    grid: dict[str, tuple] = {}
    if not isinstance(grid_doc, dict):
        diags.append(Diagnostic("grid", "missing or not an object with d, n, beta, h lists"))
    else:
        for k in sorted(set(grid_doc) - {"d", "n", "beta", "h"}):
            diags.append(Diagnostic(f"grid.{k}", "unknown grid key"))
        grid = {"d": _list(diags, grid_doc, "d", "grid", int), "n": _list(diags, grid_doc, "n", "grid", int),
                "beta": _list(diags, grid_doc, "beta", "grid", float), "h": _list(diags, grid_doc, "h", "grid", float)}

    dis = doc.get("disorder", {})
    profile = None
    dists: list[ZetaDistribution] = []
    seed_start, seed_count, shared = 0, 0, False
    if not isinstance(dis, dict):
        diags.append(Diagnostic("disorder", "must be an object"))
        dis = {}
    for k in sorted(set(dis) - {"profile", "dists", "seeds"}):
        diags.append(Diagnostic(f"disorder.{k}", "unknown disorder key"))
    try:
        profile = FieldProfile.from_dict(dis.get("profile", {"kind": "power-law"}))
    except (RfimError, TypeError, ValueError) as exc:
        diags.append(Diagnostic("disorder.profile", str(exc)))
    dist_docs = dis.get("dists", ["gaussian"])
    if not isinstance(dist_docs, list) or not dist_docs:
        diags.append(Diagnostic("disorder.dists", "must be a non-empty list"))
        dist_docs = []
    for i, dd in enumerate(dist_docs):
        try:
            dists.append(ZetaDistribution.from_dict(dd))
        except (RfimError, TypeError, ValueError) as exc:
            diags.append(Diagnostic(f"disorder.dists[{i}]", str(exc)))
    seeds = dis.get("seeds", {})
    if not isinstance(seeds, dict):
        diags.append(Diagnostic("disorder.seeds", "must be an object with start and count"))
        seeds = {}
    for k in sorted(set(seeds) - {"start", "count", "shared"}):
        diags.append(Diagnostic(f"disorder.seeds.{k}", "unknown seeds key"))
    seed_start, seed_count = seeds.get("start", 0), seeds.get("count", 1)
    shared = seeds.get("shared", False)
    if not isinstance(seed_start, int) or seed_start < 0:
        diags.append(Diagnostic("disorder.seeds.start", f"must be a nonnegative integer, got {seed_start!r}"))
    if not isinstance(seed_count, int) or seed_count < 1:
        diags.append(Diagnostic("disorder.seeds.count", f"seed range must be non-empty, got count {seed_count!r}"))
    if not isinstance(shared, bool):
        diags.append(Diagnostic("disorder.seeds.shared", "must be true or false"))

    eng = doc.get("engine", {"kind": "auto"})
    if isinstance(eng, str):
        eng = {"kind": eng}
    if not isinstance(eng, dict):
        diags.append(Diagnostic("engine", "must be a name or an object"))
        eng = {}
    for k in sorted(set(eng) - {"kind", "cap", "sampler"}):
        diags.append(Diagnostic(f"engine.{k}", "unknown engine key"))
    kind = eng.get("kind", "auto")
    if kind not in ENGINE_KINDS:
        diags.append(Diagnostic("engine.kind", f"unknown engine {kind!r}; expected one of {ENGINE_KINDS}"))
    cap = eng.get("cap", ENUMERATION_CAP)
    if not isinstance(cap, int) or not 1 <= cap <= 30:
        diags.append(Diagnostic("engine.cap", f"enumeration cap must be an integer in [1, 30], got {cap!r}"))
        cap = ENUMERATION_CAP
    sampler = SamplerConfig()
    sdoc = eng.get("sampler", {})
    try:
        if not isinstance(sdoc, dict):
            raise TypeError("must be an object")
        sampler = SamplerConfig(**sdoc)
    except (RfimError, TypeError) as exc:
        diags.append(Diagnostic("engine.sampler", str(exc)))

    obs_docs = doc.get("observables")
    observables = []
    if not isinstance(obs_docs, list) or not obs_docs:
        diags.append(Diagnostic("observables", "must be a non-empty list"))
    else:
        for i, item in enumerate(obs_docs):
            o = _observable(diags, i, item)
            if o is None:
                continue
            if any(p.label == o.label for p in observables):
                diags.append(Diagnostic(f"observables[{i}]", f"duplicate observable {o.label}"))
                continue
            observables.append(o)

    out = doc.get("output", {})
    formats = out.get("formats", ["csv", "json"]) if isinstance(out, dict) else None
    if not isinstance(formats, list) or any(f not in FORMATS for f in formats):
        diags.append(Diagnostic("output.formats", f"must be a list drawn from {FORMATS}"))
        formats = list(FORMATS)
    seed_base = doc.get("seed_base", 0)
    if not isinstance(seed_base, int) or seed_base < 0:
        diags.append(Diagnostic("seed_base", f"must be a nonnegative integer, got {seed_base!r}"))
        seed_base = 0
    name = doc.get("name", "plan")
    if not isinstance(name, str):
        diags.append(Diagnostic("name", "must be a string"))

    if diags:
        return None, diags
    plan = ExperimentPlan(name=name, grid=grid, profile=profile, dists=tuple(dists), seed_start=seed_start,
                          seed_count=seed_count, shared_seeds=shared, engine=kind, cap=cap, sampler=sampler,
                          observables=tuple(observables), formats=tuple(formats), seed_base=seed_base)
    return plan, _cross_check(plan)


def _cross_check(plan: ExperimentPlan) -> list[Diagnostic]:
    diags = []
    names = {o.name for o in plan.observables}
    for cell in plan.cells:
        V = cell.n**cell.d
        key = f"grid[{cell.label}]"
        if V > MAX_VOLUME:
            diags.append(Diagnostic(key, f"|V| = {V} exceeds the lattice cap of {MAX_VOLUME}"))
            continue
        if cell.engine == "exact" and V > plan.cap:
            diags.append(Diagnostic(key, f"|V| = {V} spins exceeds the enumeration cap of {plan.cap} (engine exact)"))
        if cell.engine == "transfer-matrix" and cell.d != 1:
            diags.append(Diagnostic(key, "transfer-matrix engine needs d = 1"))
        if cell.engine == "mcmc" and cell.d != 1 and names & {"q-consistency", "var-Fn-scaling"}:
            diags.append(Diagnostic(key, "q-consistency and var-Fn-scaling need log Z; mcmc has none for d > 1"))
        if cell.engine == "transfer-matrix" and "delta-self-averaging" in names:
            diags.append(Diagnostic(key, "delta-self-averaging needs the full Gibbs distribution (exact) or samples (mcmc)"))
        for o in plan.observables:
            if o.name == "gg-residual" and cell.engine == "exact":
                f = parse_overlap_function(str(o.get("f")))
                if isinstance(f, ClippedOverlapFunction) and 1 << ((o.get("m") + 1) * V) > REPLICA_BUDGET:
                    diags.append(Diagnostic(key, f"{o.label}: {o.get('m') + 1} replicas of {V} spins exceed the "
                                                 f"replica budget of {REPLICA_BUDGET} tuples"))
    return diags


def validate_plan(text: str) -> tuple[ExperimentPlan | None, list[Diagnostic]]:
    """Parse and cross-validate a JSON plan; never raises on bad input."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        return None, [Diagnostic("<document>", f"line {exc.lineno} column {exc.colno}: {exc.msg}")]
    try:
        plan, diags = _parse(doc)
    except Exception as exc:  # diagnostics, never an uncaught failure
        return None, [Diagnostic("<document>", f"{type(exc).__name__}: {exc}")]
    return (None, diags) if diags else (plan, [])


def load_plan(text: str) -> ExperimentPlan:
    plan, diags = validate_plan(text)
    if diags:
        raise PlanError(diags)
    return plan


def normalize(text: str) -> str:
    """Canonical JSON text of a valid plan."""
    return json.dumps(load_plan(text).to_document(), indent=2, sort_keys=True) + "\n"


BUNDLED = ("paper-suite", "smoke")


def bundled_plan_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"no bundled plan {name!r}; available: {BUNDLED}")
    return resources.files("rfimlab").joinpath("data", f"{name}.json").read_text()
