"""Run configuration files.

A config is a TOML (or JSON) document with flat sections.  Every physical
quantity carries its unit in the key name and is converted to SI here:

    [domain]
    h_mm = 1.0
    c_m_per_s = 343.0

    [filter]
    mode = "linear"
    radius_mm = 1.0

    [optimizer]
    kind = "mma"
    case = "I"

    [evaluation]
    f_min_hz = 4000.0

    [output]
    directory = "runs/mma"
    seed = 0

Unknown keys are rejected, with the closest valid key suggested.
"""
from __future__ import annotations

import difflib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .design import EPSILON, FILTER_MODES
from .geometry import DomainSpec
from .mma import CASES, MMAConfig
from .stochastic import CSGConfig, SGConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "OPTIMIZER_KINDS"]

OPTIMIZER_KINDS = ("none", "mma", "sg", "csg")

# section -> key -> default (None: optional, no default)
SCHEMA = {
    "domain": {
        "r_design_mm": 50.0,
        "l_design_mm": 50.0,
        "r_left_mm": 30.0,
        "r_right_mm": 40.0,
        "l_wg_mm": 20.0,
        "h_mm": 0.25,
        "c_m_per_s": 343.0,
    },
    "filter": {"mode": "linear", "radius_mm": 1.0, "p": 8.0},
    "optimizer": {
        "kind": "none",
        "initial_value": 1.0,
        "initial_design": None,
        "round_threshold": 0.5,
        # mma
        "case": "I",
        "freqs_hz": None,
        "gamma_schedule": [10.0 ** i for i in range(6)],
        "max_iters_per_stage": 100,
        "kkt_tol": 1e-4,
        "move_limit": 0.2,
        "asy_init": 0.5,
        "asy_incr": 1.2,
        "asy_decr": 0.7,
        # sg / csg
        "learning_rate": 30.0,
        "move_limit_c0": 0.1,
        "iters": 500,
        "gamma": 0.0,
        "cutoff_guard_hz": 1.0,
        "move_limit_min": 1e-4,
        "shrink": 0.5,
        "grow": 1.2,
        "c_f_per_hz": None,
        "c_d": 1.0,
        # campaign
        "runs": 5,
    },
    "evaluation": {
        "f_min_hz": 4000.0,
        "f_max_hz": 16000.0,
        "step_hz": 20.0,
        "reference_count": 150,
        "reference_every": 1,
        "design": None,
        "report_rounded": True,
        "cpd_points": 1001,
    },
    "output": {"directory": "run", "seed": 0, "workers": None},
}

# common spellings that string similarity alone does not catch
ALIASES = {
    "speedofsound": "c_m_per_s",
    "soundspeed": "c_m_per_s",
    "c": "c_m_per_s",
    "h": "h_mm",
    "meshsize": "h_mm",
    "radius": "radius_mm",
    "fmin": "f_min_hz",
    "fmax": "f_max_hz",
    "step": "step_hz",
    "lr": "learning_rate",
    "iterations": "iters",
    "nruns": "runs",
}


class ConfigError(ValueError):
    pass


def _suggest(key: str, section: str) -> str:
    valid = list(SCHEMA[section])
    norm = key.lower().replace("_", "").replace("-", "")
    hint = ALIASES.get(norm)
    if hint is None or hint not in valid:
        close = difflib.get_close_matches(key, valid, n=1, cutoff=0.6)
        hint = close[0] if close else None
    if hint is None:  # maybe the key lives in another section
        for other, keys in SCHEMA.items():
            if key in keys:
                return f" (did you mean [{other}] {key}?)"
        return ""
    return f" (did you mean {hint}?)"


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSpec
    filter_mode: str = "linear"
    filter_radius: float = 1e-3
    filter_p: float = 8.0
    optimizer: str = "none"
    optimizer_cfg: object = None
    initial_value: float = 1.0
    initial_design: Path | None = None
    runs: int = 5
    f_min: float = 4000.0
    f_max: float = 16000.0
    step: float = 20.0
    reference_count: int = 150
    design: Path | None = None
    report_rounded: bool = True
    cpd_points: int = 1001
    output: Path = Path("run")
    seed: int = 0
    workers: int | None = None
    raw: dict = field(default_factory=dict, compare=False)

    def snapshot(self) -> dict:
        """Every effective setting, JSON-ready."""
        out = {k: v for k, v in self.raw.items()}
        out["effective"] = {
            "domain_m": asdict(self.domain),
            "filter": {"mode": self.filter_mode, "radius_m": self.filter_radius, "p": self.filter_p},
            "optimizer": self.optimizer,
            "optimizer_config": asdict(self.optimizer_cfg) if self.optimizer_cfg is not None else None,
            "evaluation": {
                "f_min_hz": self.f_min,
                "f_max_hz": self.f_max,
                "step_hz": self.step,
                "reference_count": self.reference_count,
                "report_rounded": self.report_rounded,
                "cpd_points": self.cpd_points,
            },
            "seed": self.seed,
        }
        return out


def _read(path: Path) -> dict:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    data = _read(path)
    if overrides:
        for section, values in overrides.items():
            data.setdefault(section, {}).update(values)
    return parse_config(data, base=path.parent)


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    """Validate ``data`` against the schema, fill defaults and convert units."""
    errors = []
    merged = {}
    for section, value in data.items():
        if section not in SCHEMA:
            close = difflib.get_close_matches(section, list(SCHEMA), n=1)
            errors.append(f"unknown section [{section}]" + (f" (did you mean [{close[0]}]?)" if close else ""))
            continue
        if not isinstance(value, dict):
            errors.append(f"[{section}] must be a table of keys")
            continue
        for key in value:
            if key not in SCHEMA[section]:
                errors.append(f"unknown key {key!r} in [{section}]" + _suggest(key, section))
    for section, keys in SCHEMA.items():
        given = data.get(section, {}) if isinstance(data.get(section, {}), dict) else {}
        merged[section] = {k: given.get(k, default) for k, default in keys.items()}
    if errors:
        raise ConfigError("; ".join(errors))

    def num(section, key, kind=float, positive=False, nonneg=False):
        v = merged[section][key]
        if v is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            errors.append(f"[{section}] {key} must be a number, got {v!r}")
            return None
        if kind is int and int(v) != v:
            errors.append(f"[{section}] {key} must be an integer, got {v!r}")
            return None
        v = kind(v)
        if positive and not v > 0:
            errors.append(f"[{section}] {key} must be positive, got {v!r}")
        if nonneg and v < 0:
            errors.append(f"[{section}] {key} must be non-negative, got {v!r}")
        return v

    dom = merged["domain"]
    mm = {k: num("domain", k, positive=True) for k in dom if k.endswith("_mm")}
    c = num("domain", "c_m_per_s", positive=True)
    spec = None
    if not errors:
        spec = DomainSpec(
            r_design=mm["r_design_mm"] * 1e-3,
            l_design=mm["l_design_mm"] * 1e-3,
            r_left=mm["r_left_mm"] * 1e-3,
            r_right=mm["r_right_mm"] * 1e-3,
            l_wg=mm["l_wg_mm"] * 1e-3,
            h=mm["h_mm"] * 1e-3,
            c=c,
        )
        try:
            spec.validate()
        except ValueError as exc:
            errors.append(f"[domain] {exc}")

    flt = merged["filter"]
    if flt["mode"] not in FILTER_MODES:
        errors.append(f"[filter] mode must be one of {FILTER_MODES}, got {flt['mode']!r}")
    radius = num("filter", "radius_mm", nonneg=True)
    p = num("filter", "p", positive=True)

    ev = merged["evaluation"]
    f_min = num("evaluation", "f_min_hz", positive=True)
    f_max = num("evaluation", "f_max_hz", positive=True)
    step = num("evaluation", "step_hz", positive=True)
    ref_count = num("evaluation", "reference_count", int, positive=True)
    ref_every = num("evaluation", "reference_every", int, nonneg=True)
    cpd_points = num("evaluation", "cpd_points", int, positive=True)
    if f_min is not None and f_max is not None and f_min >= f_max:
        errors.append(f"[evaluation] f_min_hz ({f_min}) must be below f_max_hz ({f_max})")

    opt = merged["optimizer"]
    kind = opt["kind"]
    if kind not in OPTIMIZER_KINDS:
        errors.append(f"[optimizer] kind must be one of {OPTIMIZER_KINDS}, got {kind!r}")
    init_value = num("optimizer", "initial_value")
    if init_value is not None and not (EPSILON <= init_value <= 1.0):
        errors.append(f"[optimizer] initial_value must lie in [{EPSILON}, 1], got {init_value}")
    runs = num("optimizer", "runs", int, positive=True)

    def path_of(section, key):
        v = merged[section][key]
        if v is None:
            return None
        pth = Path(v)
        if not pth.is_absolute():
            pth = base / pth
        if not pth.exists():
            errors.append(f"[{section}] {key}: file {str(pth)!r} does not exist")
        return pth

    initial_design = path_of("optimizer", "initial_design")
    design = path_of("evaluation", "design")

    opt_cfg = None
    if kind == "mma" and not errors:
        if opt["freqs_hz"] is not None:
            freqs = tuple(float(x) for x in opt["freqs_hz"])
        elif opt["case"] in CASES:
            freqs = CASES[opt["case"]]
        else:
            errors.append(f"[optimizer] case must be one of {sorted(CASES)}, got {opt['case']!r}")
            freqs = ()
        opt_cfg = MMAConfig(
            freqs=freqs,
            gamma_schedule=tuple(float(g) for g in opt["gamma_schedule"]),
            max_iters_per_stage=num("optimizer", "max_iters_per_stage", int, positive=True),
            kkt_tol=num("optimizer", "kkt_tol", nonneg=True),
            move_limit=num("optimizer", "move_limit", positive=True),
            asy_init=num("optimizer", "asy_init", positive=True),
            asy_incr=num("optimizer", "asy_incr", positive=True),
            asy_decr=num("optimizer", "asy_decr", positive=True),
            reference_count=ref_count,
            reference_every=ref_every,
            f_min=f_min,
            f_max=f_max,
            round_threshold=num("optimizer", "round_threshold"),
        )
    elif kind in ("sg", "csg") and not errors:
        common = dict(
            f_min=f_min,
            f_max=f_max,
            learning_rate=num("optimizer", "learning_rate", nonneg=True),
            move_limit_c0=num("optimizer", "move_limit_c0", positive=True),
            iters=num("optimizer", "iters", int, positive=True),
            gamma=num("optimizer", "gamma", nonneg=True),
            round_threshold=num("optimizer", "round_threshold"),
            reference_count=ref_count,
            reference_every=ref_every,
            cutoff_guard_hz=num("optimizer", "cutoff_guard_hz", nonneg=True),
        )
        if kind == "sg":
            opt_cfg = SGConfig(**common)
        else:
            opt_cfg = CSGConfig(
                **common,
                move_limit_min=num("optimizer", "move_limit_min", positive=True),
                shrink=num("optimizer", "shrink", positive=True),
                grow=num("optimizer", "grow", positive=True),
                c_f=num("optimizer", "c_f_per_hz", positive=True),
                c_d=num("optimizer", "c_d", nonneg=True),
            )

    out = merged["output"]
    seed = num("output", "seed", int, nonneg=True)
    workers = num("output", "workers", int, positive=True)
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(
        domain=spec,
        filter_mode=flt["mode"],
        filter_radius=radius * 1e-3,
        filter_p=p,
        optimizer=kind,
        optimizer_cfg=opt_cfg,
        initial_value=init_value,
        initial_design=initial_design,
        runs=runs,
        f_min=f_min,
        f_max=f_max,
        step=step,
        reference_count=ref_count,
        design=design,
        report_rounded=bool(ev["report_rounded"]),
        cpd_points=cpd_points,
        output=Path(out["directory"]) if Path(out["directory"]).is_absolute() else base / out["directory"],
        seed=seed,
        workers=workers,
        raw=merged,
    )
