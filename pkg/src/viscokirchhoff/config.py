"""Run configuration: TOML text in, validated :class:`RunConfig` out.

Example::

    seed = 0

    [grid]
    L = 1.0
    n_interior = 200

    [model]
    a = 1.0
    b = 0.0
    gamma = 1.0
    p = 3.0

    [kernel]
    form = "expsum"          # "zero" | "expsum" | "table"
    terms = [[0.1, 1.0]]     # (g0, kappa) pairs
    # table = "kernel.csv"   # two columns t, g

    [stepper]
    t_max = 10.0
    dt_max = 1e-3
    convolution = "recurrence"

    [initial]
    u0 = [6.0]               # sine coefficients
    u1 = [0.0]

    [output]
    csv = "run.csv"
    json = "run.json"
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import CONVOLUTION_MODES, StepperConfig
from .functionals import ModelParams
from .kernel import Kernel, check_A1
from .spatial import Grid1D
from .theorem import FamilySpec

_NUM = (int, float)

SCHEMA = {
    "seed": int,
    "grid": {"L": _NUM, "n_interior": int},
    "model": {"a": _NUM, "b": _NUM, "gamma": _NUM, "p": _NUM},
    "kernel": {"form": str, "terms": list, "table": str, "a2_horizon": _NUM,
               "a2_samples": int, "force_quadrature": bool},
    "stepper": {"dt_init": _NUM, "dt_min": _NUM, "dt_max": _NUM, "cfl_safety": _NUM,
                "growth_tol": _NUM, "blowup_threshold": _NUM, "t_max": _NUM,
                "history_budget": int, "convolution": str, "quiet_steps": int},
    "initial": {"family": str, "u0": list, "u1": list, "amplitude": _NUM,
                "u0_csv": str, "u1_csv": str},
    "forcing": {"kind": str, "levels": list, "dt_ratio": _NUM},
    "certificate": {"enable": bool, "mandatory": bool, "m1": _NUM, "alpha": _NUM,
                    "poincare": str},
    "search": {"c_bounds": list, "lam_bounds": list, "mu_bounds": list, "budget": int},
    "output": {"csv": str, "json": str, "emit_every": int},
}
REQUIRED = (("model", "p"), ("stepper", "t_max"))


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class InitialData:
    family: str = "sine"
    u0: list = field(default_factory=list)
    u1: list = field(default_factory=list)
    amplitude: float = 1.0
    u0_csv: Optional[Path] = None
    u1_csv: Optional[Path] = None


@dataclass
class CertificateSettings:
    enable: bool = False
    mandatory: bool = False
    m1: Optional[float] = None
    alpha: Optional[float] = None
    poincare: str = "discrete"


@dataclass
class ForcingSettings:
    kind: str = "none"
    levels: tuple = (100, 200, 400)
    dt_ratio: float = 0.5


@dataclass
class OutputSettings:
    csv: Optional[Path] = None
    json: Optional[Path] = None
    emit_every: int = 1


@dataclass
class KernelTestSettings:
    horizon: float = 10.0
    samples: int = 5
    force_quadrature: bool = False


@dataclass
class RunConfig:
    grid: Grid1D
    params: ModelParams
    kernel: Kernel
    stepper: StepperConfig
    initial: InitialData
    forcing: ForcingSettings
    certificate: CertificateSettings
    output: OutputSettings
    family: FamilySpec
    search_budget: int
    kernel_test: KernelTestSettings
    seed: int
    raw: dict
    base_dir: Path


def parse_config(text: str, base_dir=".") -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"malformed config: {exc}"]) from None
    return config_from_dict(raw, base_dir)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


def _type_ok(value, expected) -> bool:
    if expected is bool:
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    return isinstance(value, expected)


def _check_schema(raw: dict) -> list:
    errors = []
    for key, value in raw.items():
        if key not in SCHEMA:
            errors.append(f"unknown key {key!r}")
            continue
        spec = SCHEMA[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                errors.append(f"{key!r} must be a section")
                continue
            for sub, v in value.items():
                if sub not in spec:
                    errors.append(f"unknown key '{key}.{sub}'")
                elif not _type_ok(v, spec[sub]):
                    errors.append(f"'{key}.{sub}' has the wrong type")
        elif not _type_ok(value, spec):
            errors.append(f"{key!r} has the wrong type")
    for sec, key in REQUIRED:
        if key not in raw.get(sec, {}):
            errors.append(f"missing required key '{sec}.{key}'")
    return errors


def _capture(errors: list, key: str, build):
    try:
        return build()
    except (ValueError, TypeError, OSError) as exc:
        errors.append(f"{key}: {exc}")
        return None


def config_from_dict(raw: dict, base_dir=".") -> RunConfig:
    """Validate a parsed config mapping; all problems are reported together."""
    raw = copy.deepcopy(raw)
    base = Path(base_dir)
    errors = _check_schema(raw)
    if errors:
        raise ConfigError(errors)
    sec = lambda name: raw.get(name, {})

    grid = _capture(errors, "grid", lambda: Grid1D(float(sec("grid").get("L", 1.0)),
                                                    sec("grid").get("n_interior", 200)))
    params = _capture(errors, "model", lambda: ModelParams(
        **{k: float(v) for k, v in sec("model").items()}))

    def build_kernel():
        k = sec("kernel")
        form = k.get("form", "zero")
        if form == "zero":
            kern = Kernel.zero()
        elif form == "expsum":
            kern = Kernel.expsum(k.get("terms", []))
        elif form == "table":
            if "table" not in k:
                raise ValueError("'kernel.table' path required for form 'table'")
            kern = Kernel.from_csv(_resolve(base, k["table"]))
        else:
            raise ValueError(f"unknown form {form!r}")
        rep = check_A1(kern)
        if not rep.ok:
            raise ValueError(f"assumption (A1) fails: {rep.reason}")
        return kern

    kernel = _capture(errors, "kernel", build_kernel)
    st = dict(sec("stepper"))
    if st.get("convolution", "recurrence") not in CONVOLUTION_MODES:
        errors.append(f"stepper.convolution must be one of {CONVOLUTION_MODES}")
    stepper = _capture(errors, "stepper", lambda: StepperConfig(**{
        k: (float(v) if k not in ("convolution", "history_budget", "quiet_steps") else v)
        for k, v in st.items()}))

    ini = sec("initial")
    initial = InitialData(
        family=ini.get("family", "sine"), u0=list(ini.get("u0", [])),
        u1=list(ini.get("u1", [])), amplitude=float(ini.get("amplitude", 1.0)),
        u0_csv=_resolve(base, ini["u0_csv"]) if "u0_csv" in ini else None,
        u1_csv=_resolve(base, ini["u1_csv"]) if "u1_csv" in ini else None)
    if initial.family not in ("sine", "csv"):
        errors.append("initial.family must be 'sine' or 'csv'")
    for name in ("u0", "u1"):
        if not all(_type_ok(c, _NUM) for c in getattr(initial, name)):
            errors.append(f"initial.{name} must be a list of numbers")
    for path in (initial.u0_csv, initial.u1_csv):
        if path is not None and not path.exists():
            errors.append(f"file not found: {path}")
    if initial.family == "csv" and initial.u0_csv is None:
        errors.append("initial.family 'csv' needs initial.u0_csv")

    fo = sec("forcing")
    forcing = ForcingSettings(kind=fo.get("kind", "none"),
                              levels=tuple(fo.get("levels", (100, 200, 400))),
                              dt_ratio=float(fo.get("dt_ratio", 0.5)))
    if forcing.kind not in ("none", "mms"):
        errors.append("forcing.kind must be 'none' or 'mms'")
    if forcing.kind == "mms" and kernel is not None and kernel.form == "table":
        errors.append("forcing.kind 'mms' needs a zero or expsum kernel")

    ce = sec("certificate")
    cert = CertificateSettings(
        enable=ce.get("enable", False), mandatory=ce.get("mandatory", False),
        m1=float(ce["m1"]) if "m1" in ce else None,
        alpha=float(ce["alpha"]) if "alpha" in ce else None,
        poincare=ce.get("poincare", "discrete"))
    if cert.poincare not in ("discrete", "continuum"):
        errors.append("certificate.poincare must be 'discrete' or 'continuum'")
    if cert.mandatory and not cert.enable:
        cert.enable = True

    out = sec("output")
    output = OutputSettings(
        csv=_resolve(base, out["csv"]) if "csv" in out else None,
        json=_resolve(base, out["json"]) if "json" in out else None,
        emit_every=out.get("emit_every", 1))
    if output.emit_every < 1:
        errors.append("output.emit_every must be >= 1")

    se = sec("search")
    family = FamilySpec()
    family = _capture(errors, "search", lambda: FamilySpec(
        c_bounds=tuple(tuple(map(float, b)) for b in se.get("c_bounds", family.c_bounds)),
        lam_bounds=tuple(map(float, se.get("lam_bounds", family.lam_bounds))),
        mu_bounds=tuple(map(float, se.get("mu_bounds", family.mu_bounds)))))

    k = sec("kernel")
    ktest = KernelTestSettings(float(k.get("a2_horizon", 10.0)), k.get("a2_samples", 5),
                               k.get("force_quadrature", False))
    if errors:
        raise ConfigError(errors)
    return RunConfig(grid=grid, params=params, kernel=kernel, stepper=stepper,
                     initial=initial, forcing=forcing, certificate=cert, output=output,
                     family=family, search_budget=se.get("budget", 1000),
                     kernel_test=ktest, seed=raw.get("seed", 0), raw=raw, base_dir=base)


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def set_dotted(raw: dict, key: str, value) -> None:
    """Assign ``value`` at ``section.key`` (or a top-level key) in a raw config."""
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
