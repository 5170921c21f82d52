"""Study configuration files.

The format is INI (read with :mod:`configparser`)::

    [study]
    model = hyperplane          ; registry name, see ``relsa models``
    n = 100000                  ; design size, >= 100
    seed = 12345
    ci_level = 0.95             ; optional, default 0.95
    replications = 1            ; optional
    threads = 1                 ; optional
    output_dir = out/hyperplane ; optional

    [marginals]                 ; optional, overrides the model's input laws
    X1 = normal(0, 1)

    [perturbation mean]         ; any number of blocks, one label each
    kind = mean_shift           ; mean_shift | mean_shift_sigma | variance_shift
    inputs = all                ; or a comma-separated list of input names
    lo = -1
    hi = 1
    points = 40

    [baselines]                 ; optional
    form = true
    sobol = false
    sobol_n_base = 10000
    sobol_replications = 1

``mean_shift`` grids hold target means, ``mean_shift_sigma`` grids hold
shifts in standard deviations of each input and ``variance_shift`` grids
hold target variances.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace

import numpy as np

from relsa.distributions import DistributionError, DistributionSpec, parse_literal, to_literal
from relsa.estimation import validate_grid
from relsa.models import FailureModel, get_model
from relsa.perturbation import (
    ConstraintInfeasibleError,
    MomentConstraint,
    check_feasible,
    mean_shift_sigma,
)

KINDS = ("mean_shift", "mean_shift_sigma", "variance_shift")
MIN_N = 100

_STUDY_KEYS = {"model", "n", "seed", "ci_level", "replications", "threads", "output_dir"}
_BLOCK_KEYS = {"kind", "inputs", "lo", "hi", "points"}
_BASELINE_KEYS = {"form", "sobol", "sobol_n_base", "sobol_replications"}


class ConfigError(ValueError):
    """Invalid study configuration; the message locates the offending key and its line."""


@dataclass(frozen=True)
class GridSpec:
    lo: float
    hi: float
    points: int

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.points)


@dataclass(frozen=True)
class PerturbationBlock:
    label: str
    kind: str
    inputs: tuple[str, ...]
    grid: GridSpec

    def constraints(self, dist: DistributionSpec) -> list[MomentConstraint]:
        """Constraint grid of this block for one input law."""
        if self.kind == "mean_shift_sigma":
            return [mean_shift_sigma(dist, t) for t in self.grid.values()]
        return [MomentConstraint(self.kind, float(v)) for v in self.grid.values()]

    @property
    def constraint_kind(self) -> str:
        return "variance_shift" if self.kind == "variance_shift" else "mean_shift"


@dataclass(frozen=True)
class BaselineToggles:
    form: bool = False
    sobol: bool = False
    sobol_n_base: int = 10_000
    sobol_replications: int = 1


@dataclass(frozen=True)
class StudyConfig:
    model: str
    n: int
    seed: int
    ci_level: float = 0.95
    replications: int = 1
    threads: int = 1
    output_dir: str = "out"
    marginals: tuple[tuple[str, str], ...] = ()
    blocks: tuple[PerturbationBlock, ...] = ()
    baselines: BaselineToggles = field(default_factory=BaselineToggles)

    def build_model(self) -> FailureModel:
        """Registry model with any marginal overrides applied."""
        model = get_model(self.model)
        if not self.marginals:
            return model
        laws = list(model.marginals)
        for name, literal in self.marginals:
            laws[model.input_names.index(name)] = parse_literal(literal)
        return model.with_marginals(laws)

    def with_overrides(self, **kw) -> "StudyConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


# --- parsing -------------------------------------------------------------------

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:;#\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """1-based line of every section header and key."""
    where: dict[tuple[str, str | None], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line[:1].isspace():
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


class _Reader:
    def __init__(self, text: str, source: str):
        self.source = source
        self.lines = _line_index(text)
        self.cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        try:
            self.cp.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from None

    def where(self, section: str, key: str | None = None) -> str:
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: [{section}]" + (f" {key}" if key else "")

    def fail(self, section, key, msg):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def check_keys(self, section: str, allowed: set[str]) -> None:
        for key in self.cp[section]:
            if key not in allowed:
                self.fail(section, key, f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def get(self, section, key, conv, default=None, required=False):
        if key not in self.cp[section]:
            if required:
                self.fail(section, key, "missing required key")
            return default
        raw = self.cp[section][key]
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            self.fail(section, key, f"invalid value {raw!r} ({exc})")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _int(text: str) -> int:
    v = float(text)
    if not v.is_integer():
        raise ValueError("expected an integer")
    return int(v)


def parse_config(text: str, source: str = "<config>") -> StudyConfig:
    """Parse and validate a study configuration.

    Raises :class:`ConfigError`, located by key and line, for unknown names,
    malformed values or grids that hit the null perturbation or an
    infeasible target.
    """
    r = _Reader(text, source)
    cp = r.cp
    if "study" not in cp:
        raise ConfigError(f"{source}: missing [study] section")
    r.check_keys("study", _STUDY_KEYS)

    name = r.get("study", "model", str.strip, required=True)
    try:
        model = get_model(name)
    except KeyError as exc:
        r.fail("study", "model", exc.args[0])
    n = r.get("study", "n", _int, required=True)
    if n < MIN_N:
        r.fail("study", "n", f"design size must be >= {MIN_N}, got {n}")
    seed = r.get("study", "seed", _int, required=True)
    if seed < 0:
        r.fail("study", "seed", "seed must be nonnegative")
    level = r.get("study", "ci_level", float, 0.95)
    if not 0.0 < level < 1.0:
        r.fail("study", "ci_level", "level must lie in (0, 1)")
    reps = r.get("study", "replications", _int, 1)
    if reps < 1:
        r.fail("study", "replications", "must be >= 1")
    threads = r.get("study", "threads", _int, 1)
    if threads < 1:
        r.fail("study", "threads", "must be >= 1")
    out = r.get("study", "output_dir", str.strip, "out")

    marginals: list[tuple[str, str]] = []
    laws = list(model.marginals)
    if "marginals" in cp:
        for key in cp["marginals"]:
            names_lower = [s.lower() for s in model.input_names]
            if key not in names_lower:
                r.fail("marginals", key, f"unknown input (model inputs: {', '.join(model.input_names)})")
            j = names_lower.index(key)
            try:
                dist = parse_literal(cp["marginals"][key])
            except DistributionError as exc:
                r.fail("marginals", key, str(exc))
            laws[j] = dist
            marginals.append((model.input_names[j], to_literal(dist)))

    blocks = []
    for section in cp.sections():
        if section in ("study", "marginals", "baselines"):
            continue
        head, _, label = section.partition(" ")
        if head != "perturbation" or not label.strip():
            r.fail(section, None, "unknown section (expected [perturbation <label>])")
        blocks.append(_parse_block(r, section, label.strip(), model, laws))

    baselines = BaselineToggles()
    if "baselines" in cp:
        r.check_keys("baselines", _BASELINE_KEYS)
        baselines = BaselineToggles(
            form=r.get("baselines", "form", _bool, False),
            sobol=r.get("baselines", "sobol", _bool, False),
            sobol_n_base=r.get("baselines", "sobol_n_base", _int, 10_000),
            sobol_replications=r.get("baselines", "sobol_replications", _int, 1),
        )
        if baselines.sobol_n_base < 100:
            r.fail("baselines", "sobol_n_base", "must be >= 100")
        if baselines.sobol_replications < 1:
            r.fail("baselines", "sobol_replications", "must be >= 1")

    return StudyConfig(
        model=name, n=n, seed=seed, ci_level=level, replications=reps, threads=threads,
        output_dir=out, marginals=tuple(marginals), blocks=tuple(blocks), baselines=baselines,
    )


def _parse_block(r: _Reader, section: str, label: str, model: FailureModel, laws) -> PerturbationBlock:
    r.check_keys(section, _BLOCK_KEYS)
    kind = r.get(section, "kind", str.strip, required=True)
    if kind not in KINDS:
        r.fail(section, "kind", f"unknown constraint kind {kind!r} (expected one of {', '.join(KINDS)})")
    raw_inputs = r.get(section, "inputs", str.strip, "all")
    if raw_inputs.lower() == "all":
        inputs = model.input_names
    else:
        inputs = tuple(s.strip() for s in raw_inputs.split(",") if s.strip())
        unknown = [s for s in inputs if s not in model.input_names]
        if unknown or not inputs:
            r.fail(section, "inputs", f"unknown input(s) {unknown} (model inputs: {', '.join(model.input_names)})")
    lo = r.get(section, "lo", float, required=True)
    hi = r.get(section, "hi", float, required=True)
    points = r.get(section, "points", _int, required=True)
    if points < 2:
        r.fail(section, "points", "a grid needs at least 2 points")
    if not lo < hi:
        r.fail(section, "hi", "grid needs lo < hi")
    block = PerturbationBlock(label, kind, tuple(inputs), GridSpec(lo, hi, points))
    for name in inputs:
        dist = laws[model.input_names.index(name)]
        grid = block.constraints(dist)
        try:
            validate_grid(dist, grid)
            for c in grid:
                check_feasible(dist, c)
        except (ValueError, ConstraintInfeasibleError) as exc:
            r.fail(section, "lo", f"input {name}: {exc}")
    return block


def load_config(path) -> StudyConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


# --- serialisation ---------------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


def dump_config(cfg: StudyConfig) -> str:
    """Serialise ``cfg``; ``parse_config(dump_config(cfg)) == cfg``."""
    out = [
        "[study]",
        f"model = {cfg.model}",
        f"n = {cfg.n}",
        f"seed = {cfg.seed}",
        f"ci_level = {_num(cfg.ci_level)}",
        f"replications = {cfg.replications}",
        f"threads = {cfg.threads}",
        f"output_dir = {cfg.output_dir}",
    ]
    if cfg.marginals:
        out += ["", "[marginals]"] + [f"{k} = {v}" for k, v in cfg.marginals]
    for b in cfg.blocks:
        out += [
            "",
            f"[perturbation {b.label}]",
            f"kind = {b.kind}",
            f"inputs = {', '.join(b.inputs)}",
            f"lo = {_num(b.grid.lo)}",
            f"hi = {_num(b.grid.hi)}",
            f"points = {b.grid.points}",
        ]
    bl = cfg.baselines
    out += [
        "",
        "[baselines]",
        f"form = {str(bl.form).lower()}",
        f"sobol = {str(bl.sobol).lower()}",
        f"sobol_n_base = {bl.sobol_n_base}",
        f"sobol_replications = {bl.sobol_replications}",
    ]
    return "\n".join(out) + "\n"
