"""Synthetic multi-country weekly panels with seasonal peaks and lead-lag coupling.

Each country's latent weekly level is

    base + amplitude * sum_s severity_s * bump(t - peak_s)
         + sum_{(src -> this, lag, strength)} strength * latent_src(t - lag)

where ``bump`` is a raised-cosine pulse of half-width ``kernel_width``,
``peak_s`` is the season's nominal peak (shifted by ``phase_offset`` for
the southern hemisphere) plus Gaussian timing jitter, and ``severity_s`` is
log-normal. Observed counts add Gaussian noise with standard deviation
``noise * latent``, are clipped at 0 and rounded.

Scenario files are JSON objects whose keys are the fields of
:class:`SynthScenario`; couplings are written as
``{"source": 0, "sink": 3, "lag": 2, "strength": 0.5}`` where source and
sink are country indices or names.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .epiweek import EpiWeek
from .errors import InvalidScenario
from .panel import CountryPanel

PERIOD = 52
HEMISPHERES = ("northern", "southern")


@dataclass(frozen=True)
class Coupling:
    source: int
    sink: int
    lag: int
    strength: float


@dataclass
class SynthScenario:
    n_countries: int = 4
    n_weeks: int = 312
    hemispheres: list = None  # default: all northern
    base_level: object = 20.0  # scalar or per-country list
    amplitude: object = 500.0  # scalar or per-country list
    phase_offset: int = 26
    peak_week: int = 6
    kernel_width: float = 13.0
    couplings: list = field(default_factory=list)
    timing_jitter: float = 2.0
    severity_jitter: float = 0.2
    jitter_scope: str = "hemisphere"
    noise: float = 0.05
    missing_rate: float = 0.0
    seed: int = 0
    start: str = "2010-W01"
    names: list = None

    def country_names(self):
        if self.names is not None:
            return [str(n) for n in self.names]
        return [f"C{i:02d}" for i in range(self.n_countries)]

    def hemisphere_list(self):
        if self.hemispheres is None:
            return ["northern"] * self.n_countries
        return list(self.hemispheres)

    def hemisphere_map(self):
        return dict(zip(self.country_names(), self.hemisphere_list()))

    def _per_country(self, value, name):
        arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (self.n_countries,)).copy()
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise InvalidScenario(f"{name} must be finite and >= 0")
        return arr

    def resolved_couplings(self):
        names = self.country_names()
        out = []
        for c in self.couplings:
            if isinstance(c, Coupling):
                src, sink, lag, strength = c.source, c.sink, c.lag, c.strength
            elif isinstance(c, dict):
                src, sink, lag, strength = c["source"], c["sink"], c["lag"], c["strength"]
            else:
                src, sink, lag, strength = c
            if isinstance(src, str):
                src = names.index(src) if src in names else -1
            if isinstance(sink, str):
                sink = names.index(sink) if sink in names else -1
            out.append(Coupling(int(src), int(sink), int(lag), float(strength)))
        return out

    def validate(self):
        n = self.n_countries
        if n < 1 or self.n_weeks < 1:
            raise InvalidScenario("need at least one country and one week")
        if len(self.country_names()) != n or len(set(self.country_names())) != n:
            raise InvalidScenario("names must be unique and match n_countries")
        hemi = self.hemisphere_list()
        if len(hemi) != n or any(h not in HEMISPHERES for h in hemi):
            raise InvalidScenario(f"hemispheres must list one of {HEMISPHERES} per country")
        self._per_country(self.base_level, "base_level")
        self._per_country(self.amplitude, "amplitude")
        for name in ("timing_jitter", "severity_jitter", "noise", "kernel_width"):
            if getattr(self, name) < 0:
                raise InvalidScenario(f"{name} must be >= 0")
        if not 0.0 <= self.missing_rate <= 1.0:
            raise InvalidScenario("missing_rate must be in [0, 1]")
        if self.jitter_scope not in ("hemisphere", "country"):
            raise InvalidScenario("jitter_scope must be 'hemisphere' or 'country'")
        couplings = self.resolved_couplings()
        if couplings and self.n_weeks < 2 * PERIOD:
            raise InvalidScenario("coupled scenarios need at least 104 weeks")
        for c in couplings:
            if not (0 <= c.source < n and 0 <= c.sink < n) or c.source == c.sink:
                raise InvalidScenario(f"bad coupling endpoints {c}")
            if c.lag < 1:
                raise InvalidScenario("coupling lags must be >= 1")
            if not 0.0 <= c.strength <= 1.0:
                raise InvalidScenario("coupling strengths must be in [0, 1]")
        try:
            EpiWeek.parse(self.start)
        except Exception as exc:
            raise InvalidScenario(str(exc)) from None
        return self

    def to_dict(self):
        d = asdict(self)
        d["couplings"] = [asdict(c) for c in self.resolved_couplings()]
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidScenario(f"unknown scenario keys {sorted(unknown)}")
        return cls(**d)


def load_scenario(text):
    try:
        return SynthScenario.from_dict(json.loads(text)).validate()
    except (json.JSONDecodeError, TypeError) as exc:
        raise InvalidScenario(str(exc)) from None


def dump_scenario(scenario):
    return json.dumps(scenario.to_dict(), indent=2)


def raised_cosine(d, width):
    """Pulse of height 1 at d = 0 falling to 0 at |d| = width."""
    d = np.asarray(d, dtype=np.float64)
    if width <= 0:
        return (d == 0).astype(np.float64)
    return np.where(np.abs(d) < width, 0.5 * (1.0 + np.cos(np.pi * d / width)), 0.0)


def seasonal_component(sc, rng, times):
    """(countries, len(times)) matrix of unit-free seasonal pulses."""
    hemi = sc.hemisphere_list()
    seasons = np.arange(int(np.floor(times.min() / PERIOD)) - 1, int(np.ceil(times.max() / PERIOD)) + 2)
    if sc.jitter_scope == "hemisphere":
        groups = {h: i for i, h in enumerate(HEMISPHERES)}
        key = [groups[h] for h in hemi]
        n_groups = len(HEMISPHERES)
    else:
        key = list(range(sc.n_countries))
        n_groups = sc.n_countries
    shift = rng.normal(0.0, sc.timing_jitter, size=(n_groups, len(seasons))) if sc.timing_jitter > 0 else np.zeros((n_groups, len(seasons)))
    sev = np.exp(rng.normal(0.0, sc.severity_jitter, size=(n_groups, len(seasons)))) if sc.severity_jitter > 0 else np.ones((n_groups, len(seasons)))
    out = np.zeros((sc.n_countries, len(times)))
    for c in range(sc.n_countries):
        phase = sc.peak_week + (sc.phase_offset if hemi[c] == "southern" else 0)
        g = key[c]
        for s_i, s in enumerate(seasons):
            peak = s * PERIOD + phase + shift[g, s_i]
            out[c] += sev[g, s_i] * raised_cosine(times - peak, sc.kernel_width)
    return out


def generate(scenario):
    """Draw a panel from ``scenario``; deterministic given ``scenario.seed``."""
    sc = scenario.validate()
    rng = np.random.default_rng(sc.seed)
    base = sc._per_country(sc.base_level, "base_level")
    amp = sc._per_country(sc.amplitude, "amplitude")
    couplings = sc.resolved_couplings()

    burn = PERIOD
    times = np.arange(-burn, sc.n_weeks, dtype=np.float64)
    own = base[:, None] + amp[:, None] * seasonal_component(sc, rng, times)
    latent = own.copy()
    if couplings:
        for t in range(len(times)):
            for c in couplings:
                if t - c.lag >= 0:
                    latent[c.sink, t] += c.strength * latent[c.source, t - c.lag]
    latent = latent[:, burn:]

    if sc.noise > 0:
        obs = latent + rng.normal(size=latent.shape) * sc.noise * np.maximum(latent, 1.0)
    else:
        obs = latent
    values = np.rint(np.maximum(obs, 0.0))
    missing = rng.random(values.shape) < sc.missing_rate if sc.missing_rate > 0 else np.zeros(values.shape, bool)
    return CountryPanel(sc.country_names(), EpiWeek.parse(sc.start), values, missing)
