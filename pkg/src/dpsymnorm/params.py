"""Public parameters and everything derived from them.

Every asymptotic constant of the construction is a named knob in
``DEFAULT_CONSTANTS``.  Logarithms are base 2 throughout.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

import numpy as np

DEFAULT_CONSTANTS: dict[str, float] = {
    # level base xi = 1 + c_xi * alpha
    "c_xi": 1.0,
    # importance parameter and the three per-pipeline thresholds
    "c_beta": 1.0,
    "c_high": 1.0,
    "c_med": 1.0,
    "c_low": 1.0,
    "c_dbl": 1.0,
    # number of subsampling levels s = ceil(c_s * log n)
    "c_s": 1.0,
    # subsampler independence ceil(c_indep * log m)
    "c_indep": 1.0,
    # repetitions ceil(c_inst * log m)
    "c_inst": 1.0,
    # CountSketch rows ceil(c_r * log m), width ceil(c_b / (eta^2 nu^2))
    "c_r": 1.0,
    "c_b": 1.0,
    "c_nu": 1.0,
    # AMS repetitions ceil(c_ams * 6 / alpha^2)
    "c_ams": 1.0,
    # release capacity (number of noisy estimates a component may publish)
    "c_K": 1.0,
    # medium/low frequency boundary T2
    "c_t2": 1.0,
    # dyadic witness window for non-high levels
    "c_win": 1.0,
    # size rescaling divisor (1 + c_div * alpha)
    "c_div": 1.0,
    # noisy low-level counts below c_floor * scale * ln(levels) are reported as 0
    "c_floor": 1.0,
    # mmc bound multiplier
    "c_mmc": 1.0,
    # heavy-hitter exclusion constant C in (0, 1)
    "c_excl": 0.5,
    # width above which a substream sketch is collision-free whp: c_exact * n / 2^j
    "c_exact": 4.0,
    # relative budget weights of the four released components
    "w_partition": 1.0,
    "w_high": 1.0,
    "w_medium": 1.0,
    "w_low": 1.0,
}

COMPONENTS = ("partition", "high", "medium", "low")

# replace-one-update neighbours move one unit between two coordinates, so a
# released vector of level counts changes in at most four entries
LOW_COUNT_SENSITIVITY = 4.0
ESTIMATE_SENSITIVITY = 2.0


class InfeasibleParams(ValueError):
    """Raised when the requested accuracy/privacy cannot fit the memory cap."""


class ParamsClamped(UserWarning):
    pass


@dataclass(frozen=True)
class PublicParams:
    n: int
    m: int
    alpha: float
    epsilon: float
    delta: float
    M: float = 1.0
    constants: Mapping[str, float] = field(default_factory=dict)
    instances: int | None = None
    max_j: int | None = None
    memory_cap: int = 1 << 26

    def __post_init__(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not (isinstance(self.m, (int, np.integer)) and self.m >= self.n):
            raise ValueError(f"m must be an integer >= n, got m={self.m!r}, n={self.n}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.M >= 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        unknown = set(self.constants) - set(DEFAULT_CONSTANTS)
        if unknown:
            raise ValueError(f"unknown constant knobs: {sorted(unknown)}")
        for key, value in self.constants.items():
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"constant {key} must be positive, got {value}")
        if not 0 < self.knob("c_excl") < 1:
            raise ValueError("c_excl must lie in (0, 1)")
        if self.instances is not None and self.instances < 1:
            raise ValueError("instances must be >= 1")
        if self.max_j is not None and self.max_j < 0:
            raise ValueError("max_j must be >= 0")

    def knob(self, name: str) -> float:
        return float(self.constants.get(name, DEFAULT_CONSTANTS[name]))

    def all_constants(self) -> dict[str, float]:
        out = dict(DEFAULT_CONSTANTS)
        out.update({k: float(v) for k, v in self.constants.items()})
        return out

    def with_constants(self, **overrides: float) -> "PublicParams":
        merged = dict(self.constants)
        merged.update(overrides)
        return replace(self, constants=merged)


@dataclass(frozen=True)
class DerivedParams:
    xi: float
    beta: float
    beta_high: float
    beta_med: float
    beta_low: float
    beta_dblprime: float
    s: int
    ell: int
    gammas: tuple[float, ...]
    r_instances: int
    noise_scale_high: float
    noise_scale_med: float
    noise_scale_low: float
    noise_scale_f2: float
    eta_partition: float
    nu: float
    eta_high: float
    k_high: int
    k_med: int
    k_partition: int
    t2: float
    tau_high: float
    tau_win: float
    rows: int
    full_width: int
    sub_widths: tuple[int, ...]
    ams_reps: int
    subsample_degree: int
    eps_instance: float
    delta_instance: float
    budget: Mapping[str, Fraction]
    clamped: bool
    memory_counters: int

    @property
    def gamma(self) -> float:
        return self.gammas[0]

    def component_epsilon(self, component: str) -> float:
        """Per-instance epsilon available to one released component."""
        return self.eps_instance * float(self.budget[component])

    def as_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = list(value)
            elif name == "budget":
                value = {k: [v.numerator, v.denominator] for k, v in value.items()}
            out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "DerivedParams":
        kwargs = dict(data)
        kwargs["gammas"] = tuple(kwargs["gammas"])
        kwargs["sub_widths"] = tuple(kwargs["sub_widths"])
        kwargs["budget"] = {k: Fraction(a, b) for k, (a, b) in kwargs["budget"].items()}
        return cls(**kwargs)


def log2(x: float) -> float:
    return max(math.log2(x), 1.0)


def _clamp_unit(value: float) -> tuple[float, bool]:
    if not math.isfinite(value) or value >= 1.0:
        return 1.0 - 1e-9, True
    if value <= 0.0:
        return 1e-300, True
    return value, False


def _capped_ceil(value: float, cap: int) -> int:
    if not math.isfinite(value) or value >= cap:
        return cap
    return max(1, math.ceil(value))


def draw_gamma(seed: int, instance: int) -> float:
    """Boundary randomizer for one instance, uniform on the open interval (1/2, 1)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(instance, 0x6A))
    u = np.random.Generator(np.random.Philox(ss)).integers(1, 1 << 53) / float(1 << 53)
    return 0.5 + 0.5 * u


def derive(pub: PublicParams, rng_seed: int) -> DerivedParams:
    alpha, eps, n, m = pub.alpha, pub.epsilon, pub.n, pub.m
    k = pub.knob
    lm, ln = log2(m), log2(n)

    raw = {
        "beta": k("c_beta") * alpha**5 / (pub.M**2 * lm**5),
    }
    raw["beta_high"] = k("c_high") * alpha**2 * raw["beta"] * eps**2 / lm**2
    raw["beta_med"] = k("c_med") * alpha**3 * raw["beta"] * eps**2 / lm**2
    raw["beta_low"] = k("c_low") * alpha**2 * raw["beta"] * eps / ln
    raw["beta_dblprime"] = k("c_dbl") * raw["beta_low"] * alpha**2 * eps**3 / ln**2
    clamped = False
    thresholds = {}
    for name, value in raw.items():
        thresholds[name], fired = _clamp_unit(value)
        clamped |= fired
    if clamped:
        warnings.warn("derived thresholds clamped into (0, 1)", ParamsClamped, stacklevel=2)
    beta = thresholds["beta"]
    beta_high = thresholds["beta_high"]
    beta_med = thresholds["beta_med"]
    beta_dbl = thresholds["beta_dblprime"]

    xi = 1.0 + k("c_xi") * alpha
    ell = math.ceil(math.log(2 * m) / math.log(xi))
    s = math.ceil(k("c_s") * math.log2(n)) if n > 1 else 0
    if pub.max_j is not None:
        s = min(s, pub.max_j)
    r_inst = pub.instances or max(1, math.ceil(k("c_inst") * lm))

    weights = {c: Fraction(k(f"w_{c}")) for c in COMPONENTS}
    total_w = sum(weights.values())
    budget = {c: w / total_w for c, w in weights.items()}
    eps_inst = eps / r_inst
    delta_inst = pub.delta / r_inst
    eps_part = eps_inst * float(budget["partition"])
    # the partition share pays for the noisy F2 and the noisy top-K in equal halves
    eps_f2 = eps_part / 2
    eps_topk = eps_part / 2
    eps_high = eps_inst * float(budget["high"])
    eps_med = eps_inst * float(budget["medium"])
    eps_low = eps_inst * float(budget["low"])

    nu = min(k("c_nu") * alpha, 0.5)
    eta_high = alpha * math.sqrt(beta_high)
    k_high = min(_capped_ceil(k("c_K") * xi**2 / beta_high, n), n)
    k_med = min(_capped_ceil(k("c_K") / beta_med, n), n)
    k_part = min(_capped_ceil(k("c_K") / eta_high**2, n), n)
    eta_part = 1.0 / math.sqrt(k_part)

    rows = max(1, math.ceil(k("c_r") * lm))
    if rows % 2 == 0:
        rows += 1
    exact_cap = max(1, math.ceil(k("c_exact") * n))
    full_width = _capped_ceil(k("c_b") / (eta_high**2 * nu**2), exact_cap)
    sub_formula = max(
        k("c_b") / (beta_dbl * nu**2),
        k("c_b") / (alpha**2 * beta_med * eps**2 * nu**2),
    )
    sub_widths = tuple(
        _capped_ceil(sub_formula, max(1, math.ceil(k("c_exact") * n / 2**j)))
        for j in range(s + 1)
    )
    ams_reps = max(1, math.ceil(k("c_ams") * 6 / alpha**2))
    degree = max(2, math.ceil(k("c_indep") * lm))
    memory = r_inst * (rows * (full_width + sum(sub_widths)) + ams_reps)
    if memory > pub.memory_cap:
        raise InfeasibleParams(
            f"parameters infeasible: {memory} sketch counters exceed the cap {pub.memory_cap}"
        )

    return DerivedParams(
        xi=xi,
        beta=beta,
        beta_high=beta_high,
        beta_med=beta_med,
        beta_low=thresholds["beta_low"],
        beta_dblprime=beta_dbl,
        s=s,
        ell=ell,
        gammas=tuple(draw_gamma(rng_seed, t) for t in range(r_inst)),
        r_instances=r_inst,
        noise_scale_high=ESTIMATE_SENSITIVITY * k_high / eps_high,
        noise_scale_med=ESTIMATE_SENSITIVITY * k_med / eps_med,
        noise_scale_low=LOW_COUNT_SENSITIVITY / eps_low,
        noise_scale_f2=ESTIMATE_SENSITIVITY / eps_f2,
        eta_partition=eta_part,
        nu=nu,
        eta_high=eta_high,
        k_high=k_high,
        k_med=k_med,
        k_partition=k_part,
        t2=k("c_t2") * ln / (beta_med * alpha * eps_inst),
        tau_high=beta_high,
        tau_win=k("c_win") * beta_high,
        rows=rows,
        full_width=full_width,
        sub_widths=sub_widths,
        ams_reps=ams_reps,
        subsample_degree=degree,
        eps_instance=eps_inst,
        delta_instance=delta_inst,
        budget=budget,
        clamped=clamped,
        memory_counters=memory,
    )


def mmc_bound(norm, n: int, c: float = 1.0) -> float:
    """Upper bound on the maximum modulus of concentration of ``norm`` in dimension n."""
    family = getattr(norm, "family", None)
    if family == "lp":
        p = float(norm.param)
        if p <= 0:
            raise ValueError("L_p needs p > 0")
        if p <= 2:
            return c * log2(n)
        return c * n ** (0.5 - 1.0 / p)
    if family == "topk":
        kk = int(norm.param)
        if not 1 <= kk <= n:
            raise ValueError(f"top-k needs 1 <= k <= n, got k={kk}")
        return c * math.sqrt(n / kk) * log2(n)
    raise ValueError("mmc unknown, supply M manually")


def knobs_for(pub: PublicParams, **targets: float) -> dict[str, float]:
    """Constant knobs that make the derived thresholds hit the requested values.

    Accepts any of ``beta``, ``beta_high``, ``beta_med``, ``beta_low``,
    ``beta_dblprime``; the chain beta -> beta_* is respected.
    """
    alpha, eps = pub.alpha, pub.epsilon
    lm, ln = log2(pub.m), log2(pub.n)
    out: dict[str, float] = {}
    base = alpha**5 / (pub.M**2 * lm**5)
    beta = targets.get("beta", pub.knob("c_beta") * base)
    if "beta" in targets:
        out["c_beta"] = targets["beta"] / base
    if "beta_high" in targets:
        out["c_high"] = targets["beta_high"] * lm**2 / (alpha**2 * beta * eps**2)
    if "beta_med" in targets:
        out["c_med"] = targets["beta_med"] * lm**2 / (alpha**3 * beta * eps**2)
    beta_low = targets.get("beta_low", pub.knob("c_low") * alpha**2 * beta * eps / ln)
    if "beta_low" in targets:
        out["c_low"] = targets["beta_low"] * ln / (alpha**2 * beta * eps)
    if "beta_dblprime" in targets:
        out["c_dbl"] = targets["beta_dblprime"] * ln**2 / (beta_low * alpha**2 * eps**3)
    return out


PUBLIC_KEYS = {
    "n": int,
    "m": int,
    "alpha": float,
    "epsilon": float,
    "delta": float,
    "M": float,
    "instances": int,
    "max_j": int,
    "memory_cap": int,
    "seed": int,
}


def parse_config_text(text: str) -> tuple[dict, dict[str, float]]:
    """Parse ``key=value`` lines into (public fields, constant knobs).

    Blank lines and ``#`` comments are ignored.  Unknown keys are an error.
    """
    public: dict = {}
    constants: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in PUBLIC_KEYS:
            public[key] = PUBLIC_KEYS[key](float(value)) if PUBLIC_KEYS[key] is int else float(value)
        elif key in DEFAULT_CONSTANTS:
            constants[key] = float(Fraction(value))
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return public, constants


def load_config(path: str | Path) -> tuple[dict, dict[str, float]]:
    return parse_config_text(Path(path).read_text())


def desk_constants(pub: PublicParams) -> dict[str, float]:
    """A knob preset that gives usable accuracy at laptop scale.

    With every knob at 1 the thresholds are so small that all levels fall in
    the low band and the per-level noise swamps heavy levels.  This preset
    makes coordinates above L2/8 high, moves the medium/low boundary to a few
    thousand, lets the j = 0 substream witness every level with weight above
    100 * L2 / m, spends little on the (unused by queries) partition release
    and shrinks the size divisor.
    """
    knobs = knobs_for(pub, beta_high=1 / 64, beta_med=1 / 128)
    knobs.update(
        c_t2=0.85,
        c_win=1e4 / pub.m**2 * 64,
        c_div=0.5,
        w_partition=0.1,
        w_high=0.3,
        w_medium=0.3,
        w_low=0.3,
    )
    return knobs
