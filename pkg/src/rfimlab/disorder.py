"""Quenched random fields g_x = h_x * zeta_x.

The noise catalog is restricted to standardized laws (mean 0, variance 1)
with a finite fifth absolute moment.  Every realization is a pure function of
(lattice, profile, distribution, seed): the draw at site ``i`` comes from its
own substream ``SeedSequence(seed, spawn_key=(i,))``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ValidationError
from .lattice import LatticeSpec, build_lattice, site_norms

ZETA_KINDS = ("gaussian", "rademacher", "uniform", "centered-exponential", "student-t")
PROFILE_KINDS = ("constant", "power-law")

_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ZetaDistribution:
    kind: str
    nu: float | None = None

    def __post_init__(self):
        if self.kind not in ZETA_KINDS:
            raise ValidationError(f"unknown zeta distribution {self.kind!r}; expected one of {ZETA_KINDS}")
        if self.kind == "student-t":
            if self.nu is None:
                raise ValidationError("student-t requires degrees of freedom 'nu'")
            if not self.nu > 5:
                raise ValidationError(f"finite fifth moment requires ν > 5 (got ν = {self.nu:g})")
        elif self.nu is not None:
            raise ValidationError(f"parameter 'nu' is only valid for student-t, not {self.kind}")

    @property
    def name(self) -> str:
        return f"student-t({self.nu:g})" if self.kind == "student-t" else self.kind

    @property
    def is_discrete(self) -> bool:
        return self.kind == "rademacher"

    @property
    def t_scale(self) -> float:
        return math.sqrt((self.nu - 2.0) / self.nu)

    def sample(self, rng: np.random.Generator, size=None):
        k = self.kind
        if k == "gaussian":
            return rng.standard_normal(size)
        if k == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size) - 1.0
        if k == "uniform":
            return rng.uniform(-_SQRT3, _SQRT3, size)
        if k == "centered-exponential":
            return rng.standard_exponential(size) - 1.0
        return rng.standard_t(self.nu, size) * self.t_scale

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities of a finitely supported law."""
        if not self.is_discrete:
            raise ValidationError(f"{self.name} is not finitely supported")
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])

    def support_radius(self) -> float:
        """sup |zeta| over the support (inf for unbounded laws)."""
        if self.kind == "rademacher":
            return 1.0
        if self.kind == "uniform":
            return _SQRT3
        return math.inf

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "gaussian":
            return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        if k == "uniform":
            return np.where(np.abs(z) <= _SQRT3, 1.0 / (2 * _SQRT3), 0.0)
        if k == "centered-exponential":
            return np.where(z >= -1.0, np.exp(-(z + 1.0)), 0.0)
        if k == "student-t":
            s, nu = self.t_scale, self.nu
            t = z / s
            c = math.exp(math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2)) / math.sqrt(nu * math.pi)
            return c * (1 + t * t / nu) ** (-(nu + 1) / 2) / s
        raise ValidationError(f"{self.name} has no density")

    def interval(self) -> tuple[float, float]:
        k = self.kind
        if k == "uniform":
            return -_SQRT3, _SQRT3
        if k == "centered-exponential":
            return -1.0, math.inf
        if k == "rademacher":
            return -1.0, 1.0
        return -math.inf, math.inf

    def abs_moment(self, k: float) -> float:
        """Closed-form E|zeta|^k."""
        kind = self.kind
        if kind == "gaussian":
            return 2 ** (k / 2) * math.gamma((k + 1) / 2) / math.sqrt(math.pi)
        if kind == "rademacher":
            return 1.0
        if kind == "uniform":
            return _SQRT3**k / (k + 1)
        if kind == "centered-exponential":
            if k != int(k) or k < 0:
                raise ValidationError("centered-exponential absolute moments implemented for integer k")
            # int_0^1 u^k e^u du by the recursion J_k = e - k J_{k-1}
            j = math.e - 1.0
            for i in range(1, int(k) + 1):
                j = math.e - i * j
            return (j + math.factorial(int(k))) / math.e
        nu = self.nu
        if not k < nu:
            return math.inf
        log_m = (k / 2) * math.log(nu) + math.lgamma((k + 1) / 2) + math.lgamma((nu - k) / 2)
        log_m -= 0.5 * math.log(math.pi) + math.lgamma(nu / 2)
        return math.exp(log_m) * self.t_scale**k

    def raw_moment(self, k: int) -> float:
        """Closed-form E zeta^k for integer k."""
        if self.kind == "centered-exponential":
            # E(E-1)^k is the subfactorial !k
            return float(sum((-1) ** j * math.factorial(k) // math.factorial(j) for j in range(k + 1)))
        if k % 2:
            return 0.0
        return self.abs_moment(k)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.nu is not None:
            out["nu"] = self.nu
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any] | str) -> "ZetaDistribution":
        if isinstance(data, str):
            return cls(data)
        unknown = set(data) - {"kind", "nu"}
        if unknown:
            raise ValidationError(f"unknown distribution keys {sorted(unknown)}")
        if "kind" not in data:
            raise ValidationError("distribution needs a 'kind'")
        nu = data.get("nu")
        return cls(data["kind"], None if nu is None else float(nu))


def sample_zeta(dist: ZetaDistribution, stream: np.random.Generator) -> float:
    return float(dist.sample(stream))


@dataclass(frozen=True)
class FieldProfile:
    """Deterministic field amplitudes h_x with sup |h_x| <= 1.

    ``constant``: h_x = c.  ``power-law``: h_x = h_star * max(r, 1)**(-alpha)
    with r the L1 distance to ``origin`` and h_origin = h_star exactly.
    ``origin=None`` means the lexicographically first site (1, ..., 1).
    """

    kind: str
    c: float = 1.0
    h_star: float = 0.5
    alpha: float = 1.0
    origin: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValidationError(f"unknown field profile {self.kind!r}; expected one of {PROFILE_KINDS}")
        if self.kind == "constant" and not abs(self.c) <= 1:
            raise ValidationError(f"constant profile needs |c| <= 1, got {self.c}")
        if self.kind == "power-law":
            if not 0 < self.h_star <= 1:
                raise ValidationError(f"power-law profile needs h_star in (0, 1], got {self.h_star}")
            if not self.alpha > 0:
                raise ValidationError(f"power-law profile needs alpha > 0, got {self.alpha}")

    @classmethod
    def constant(cls, c: float = 1.0) -> "FieldProfile":
        return cls("constant", c=c)

    @classmethod
    def power_law(cls, h_star: float, alpha: float, origin: Sequence[int] | None = None) -> "FieldProfile":
        return cls("power-law", h_star=h_star, alpha=alpha, origin=None if origin is None else tuple(origin))

    @property
    def name(self) -> str:
        if self.kind == "constant":
            return f"constant(c={self.c:g})"
        return f"power-law(h*={self.h_star:g},alpha={self.alpha:g})"

    def values(self, spec: LatticeSpec) -> np.ndarray:
        if self.kind == "constant":
            return np.full(spec.volume, float(self.c))
        origin = self.origin if self.origin is not None else (1,) * spec.d
        r = site_norms(spec, origin).astype(float)
        h = self.h_star * np.maximum(r, 1.0) ** (-self.alpha)
        h[r == 0] = self.h_star
        return h

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "c": self.c}
        out: dict[str, Any] = {"kind": "power-law", "h_star": self.h_star, "alpha": self.alpha}
        if self.origin is not None:
            out["origin"] = list(self.origin)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "FieldProfile":
        kind = data.get("kind")
        allowed = {"constant": {"kind", "c"}, "power-law": {"kind", "h_star", "alpha", "origin"}}
        if kind not in allowed:
            raise ValidationError(f"unknown field profile {kind!r}; expected one of {PROFILE_KINDS}")
        unknown = set(data) - allowed[kind]
        if unknown:
            raise ValidationError(f"unknown {kind} profile keys {sorted(unknown)}")
        if kind == "constant":
            return cls.constant(float(data.get("c", 1.0)))
        origin = data.get("origin")
        return cls.power_law(float(data.get("h_star", 0.5)), float(data.get("alpha", 1.0)), origin)


@dataclass(frozen=True)
class DisorderRealization:
    spec: LatticeSpec
    profile: FieldProfile
    dist: ZetaDistribution
    seed: int
    zeta: np.ndarray = field(repr=False, compare=False)
    hprofile: np.ndarray = field(repr=False, compare=False)
    g: np.ndarray = field(repr=False, compare=False)

    @property
    def weights(self) -> np.ndarray:
        """Overlap site weights E g_x^2 = h_x^2."""
        return self.hprofile**2

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "d": self.spec.d,
                "n": self.spec.n,
                "profile": self.profile.to_dict(),
                "dist": self.dist.to_dict(),
                "g": [float(v) for v in self.g],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DisorderRealization":
        """Rebuild from a JSON record and check the stored g replays exactly."""
        data = json.loads(text)
        spec = build_lattice(int(data["d"]), int(data["n"]))
        real = realize_disorder(
            spec, FieldProfile.from_dict(data["profile"]), ZetaDistribution.from_dict(data["dist"]), int(data["seed"])
        )
        if not np.array_equal(real.g, np.asarray(data["g"], dtype=float)):
            raise ValidationError("stored g does not match the replayed realization")
        return real


def site_stream(seed: int, site: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(site,))))


def realize_disorder(spec: LatticeSpec, profile: FieldProfile, dist: ZetaDistribution, seed: int) -> DisorderRealization:
    if not 0 <= seed < 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    zeta = np.array([sample_zeta(dist, site_stream(seed, i)) for i in range(spec.volume)], dtype=float)
    h = profile.values(spec)
    if np.max(np.abs(h), initial=0.0) > 1.0:
        raise ValidationError("field profile exceeds sup |h_x| <= 1")
    return DisorderRealization(spec=spec, profile=profile, dist=dist, seed=int(seed), zeta=zeta, hprofile=h, g=h * zeta)


def fixed_disorder(spec: LatticeSpec, g: Sequence[float], hprofile: Sequence[float] | None = None) -> DisorderRealization:
    """A realization with hand-chosen fields, for tests and closed-form checks.

    ``hprofile`` defaults to ones; zeta is then g / h where h != 0.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (spec.volume,):
        raise ValidationError(f"expected {spec.volume} field values, got shape {g.shape}")
    h = np.ones(spec.volume) if hprofile is None else np.asarray(hprofile, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(h != 0, g / np.where(h != 0, h, 1.0), 0.0)
    return DisorderRealization(
        spec=spec, profile=FieldProfile.constant(1.0), dist=ZetaDistribution("gaussian"), seed=0, zeta=zeta, hprofile=h, g=g
    )


def smallness_ratio(profile: FieldProfile, spec: LatticeSpec) -> float:
    """(sum_x |h_x|) / |V_n|, the finite-n diagnostic of sum |h_x| = o(|V_n|)."""
    return float(np.abs(profile.values(spec)).sum() / spec.volume)
