"""Sweep configuration files.

The format is INI-style text (``configparser``) with these sections:

``[problem]``
    Any :class:`~randinv.problems.ProblemSpec` field, e.g. ``problem = deconv1d``,
    ``n = 1000``, ``noise = 0.05``, ``alpha = 16``, ``seed = 0``.
``[run]``
    ``methods`` (comma list), ``N`` (comma list of integers, kept sorted),
    ``seeds`` (comma list), ``distribution``, ``out``, ``budget_secs``,
    ``threads``, ``map_cache``.
``[spectrum]``
    ``prior`` (identity or bilaplacian), ``N`` (comma list), ``seed``, ``top_k``.
``[bounds]``
    ``id`` (mean, outer, triple or perturb), ``beta``, ``N``, ``R``, ``seed``,
    ``dim``, ``variance``, ``moment``, ``betas``, ``n``, ``k``.

Lines starting with ``#`` or ``;`` are comments.  Unknown keys are errors.
"""

import configparser
import io
from dataclasses import dataclass, field, fields

from .problems.spec import ProblemSpec
from .randomize import KINDS
from .solvers import MethodId


class ConfigError(ValueError):
    """Invalid configuration."""


_INT_FIELDS = {"n", "grid", "angles", "m", "steps", "seed"}
_BOOL_FIELDS = {"add_noise"}
_STR_FIELDS = {"problem", "distribution"}

RUN_DEFAULTS = dict(methods="MAP", N="100", seeds="0", distribution="", out="results",
                    budget_secs="3600", threads="0", map_cache="")
SPECTRUM_DEFAULTS = dict(prior="identity", N="100", seed="0", top_k="0")
BOUNDS_DEFAULTS = dict(id="mean", beta="0.5", N="16", R="2000", seed="0", dim="1",
                       variance="1.0", moment="cov", betas="2, 4, 8, 16", n="20", k="30")


def _int(text):
    """Integer from text; exact for plain integers, also accepts forms like 1e4."""
    text = str(text).strip()
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"{text!r} is not an integer") from None
        return int(value)


def _int_list(text):
    try:
        return [_int(x) for x in str(text).replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}") from exc


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    methods: list = field(default_factory=lambda: ["MAP"])
    N: list = field(default_factory=lambda: [100])
    seeds: list = field(default_factory=lambda: [0])
    distribution: str = ""
    out: str = "results"
    budget_secs: float = 3600.0
    threads: int = 0
    map_cache: str = ""
    spectrum: dict = field(default_factory=lambda: dict(SPECTRUM_DEFAULTS))
    bounds: dict = field(default_factory=lambda: dict(BOUNDS_DEFAULTS))

    def __post_init__(self):
        self.N = sorted(set(int(x) for x in self.N))
        if any(x < 1 for x in self.N):
            raise ConfigError("sample counts must be positive")
        if not self.budget_secs > 0:
            raise ConfigError("budget_secs must be positive")
        for m in self.methods:
            try:
                MethodId.parse(m)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.distribution and self.distribution not in KINDS:
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")

    @property
    def sketch_distribution(self):
        return self.distribution or self.problem.resolved().distribution

    # spectrum and bounds accessors ---------------------------------------
    def spectrum_options(self):
        s = self.spectrum
        return dict(prior=s["prior"], N=sorted(_int_list(s["N"])), seed=_int(s["seed"]),
                    top_k=_int(s["top_k"]))

    def bounds_options(self):
        b = self.bounds
        return dict(id=b["id"], beta=float(b["beta"]), N=_int_list(b["N"]), R=_int(b["R"]),
                    seed=_int(b["seed"]), dim=_int(b["dim"]), variance=float(b["variance"]),
                    moment=b["moment"], betas=_float_list(b["betas"]), n=_int(b["n"]),
                    k=_int(b["k"]))


def parse_config(text):
    """Parse configuration text into a :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(cp.sections()) - {"problem", "run", "spectrum", "bounds"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    kwargs = {}
    if cp.has_section("problem"):
        names = set(ProblemSpec.field_names())
        for key, raw in cp.items("problem"):
            if key not in names:
                raise ConfigError(f"unknown problem key {key!r}")
            kwargs[key] = _convert_problem(key, raw)
    try:
        problem = ProblemSpec(**kwargs)
        problem.resolved()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    run = dict(RUN_DEFAULTS)
    run.update(_section(cp, "run", RUN_DEFAULTS))
    spectrum = dict(SPECTRUM_DEFAULTS)
    spectrum.update(_section(cp, "spectrum", SPECTRUM_DEFAULTS))
    bounds = dict(BOUNDS_DEFAULTS)
    bounds.update(_section(cp, "bounds", BOUNDS_DEFAULTS))
    try:
        cfg = RunConfig(
            problem=problem,
            methods=[m.strip() for m in run["methods"].split(",") if m.strip()],
            N=_int_list(run["N"]),
            seeds=_int_list(run["seeds"]),
            distribution=run["distribution"].strip(),
            out=run["out"].strip(),
            budget_secs=float(run["budget_secs"]),
            threads=int(run["threads"]),
            map_cache=run["map_cache"].strip(),
            spectrum=spectrum,
            bounds=bounds,
        )
        cfg.spectrum_options()
        cfg.bounds_options()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _section(cp, name, allowed):
    if not cp.has_section(name):
        return {}
    out = {}
    for key, raw in cp.items(name):
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        out[key] = raw
    return out


def _convert_problem(key, raw):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if key in _STR_FIELDS:
        return raw
    if key in _BOOL_FIELDS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key} must be true or false")
    try:
        return _int(raw) if key in _INT_FIELDS else float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key} must be numeric, got {raw!r}") from exc


def serialize_config(cfg):
    """Configuration text that parses back to an equal :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["problem"] = {f.name: _fmt(getattr(cfg.problem, f.name)) for f in fields(ProblemSpec)
                     if getattr(cfg.problem, f.name) is not None}
    cp["run"] = {
        "methods": ", ".join(cfg.methods),
        "N": _fmt(cfg.N),
        "seeds": _fmt(cfg.seeds),
        "distribution": cfg.distribution,
        "out": cfg.out,
        "budget_secs": _fmt(float(cfg.budget_secs)),
        "threads": str(cfg.threads),
        "map_cache": cfg.map_cache,
    }
    cp["spectrum"] = {k: str(v) for k, v in cfg.spectrum.items()}
    cp["bounds"] = {k: str(v) for k, v in cfg.bounds.items()}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
