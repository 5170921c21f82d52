"""End-to-end study: one design per replication, index curves and baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from relsa.baselines import (
    DesignPoint,
    SobolEstimate,
    SobolReplications,
    hlrf_design_point,
    sobol_pick_freeze,
)
from relsa.config import StudyConfig
from relsa.estimation import (
    ProbabilityEstimate,
    SensitivityCurve,
    compute_sensitivity_curve,
    estimate_failure_probability,
    run_design,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CurveRecord:
    block: str
    kind: str
    input_name: str
    replication: int
    grid_values: tuple[float, ...]
    curve: SensitivityCurve


@dataclass(frozen=True)
class StudyResult:
    config: StudyConfig
    input_names: tuple[str, ...]
    probabilities: tuple[ProbabilityEstimate, ...]
    curves: tuple[CurveRecord, ...]
    form: DesignPoint | None = None
    sobol: SobolEstimate | None = None
    sobol_replications: SobolReplications | None = None
    calls: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def probability(self) -> ProbabilityEstimate:
        """Estimate from the first replication."""
        return self.probabilities[0]

    def curves_for(self, replication: int = 0) -> list[CurveRecord]:
        return [c for c in self.curves if c.replication == replication]

    @property
    def failures(self) -> list[str]:
        out = []
        for rec in self.curves:
            for f in rec.curve.failures:
                out.append(
                    f"replication {rec.replication}, [{rec.block}] {rec.input_name} "
                    f"at {f.grid_value!r}: {f.error}"
                )
        return out


def run_study(cfg: StudyConfig) -> StudyResult:
    """Run the configured study; results depend only on the config (and seed)."""
    model = cfg.build_model()
    names = model.input_names
    timings: dict[str, float] = {}
    probabilities = []
    curves = []
    design_calls = curve_calls = 0
    t_design = t_curves = 0.0
    for rep in range(cfg.replications):
        before = model.call_counter
        t0 = time.perf_counter()
        design = run_design(model, cfg.n, cfg.seed, rep)
        t1 = time.perf_counter()
        design_calls += model.call_counter - before
        probabilities.append(estimate_failure_probability(design, cfg.ci_level))
        before = model.call_counter
        for block in cfg.blocks:
            for name in block.inputs:
                i = names.index(name) + 1
                grid = block.constraints(model.marginals[i - 1])
                labels = block.grid.values()
                curve = compute_sensitivity_curve(
                    design, model, i, grid, cfg.ci_level, cfg.threads, labels=labels
                )
                curves.append(
                    CurveRecord(block.label, block.kind, name, rep, tuple(float(v) for v in labels), curve)
                )
        curve_calls += model.call_counter - before
        t_design += t1 - t0
        t_curves += time.perf_counter() - t1
    timings["design"] = t_design
    timings["curves"] = t_curves

    form = None
    form_calls = 0
    if cfg.baselines.form:
        t0 = time.perf_counter()
        before = model.call_counter
        form = hlrf_design_point(model)
        form_calls = model.call_counter - before
        timings["form"] = time.perf_counter() - t0

    sobol = reps = None
    sobol_calls = 0
    if cfg.baselines.sobol:
        t0 = time.perf_counter()
        before = model.call_counter
        count = max(cfg.replications, cfg.baselines.sobol_replications)
        runs = [sobol_pick_freeze(model, cfg.baselines.sobol_n_base, cfg.seed, r) for r in range(count)]
        sobol = runs[0]
        if count > 1:
            reps = SobolReplications(
                np.array([s.first_order for s in runs]), np.array([s.total for s in runs])
            )
        sobol_calls = model.call_counter - before
        timings["sobol"] = time.perf_counter() - t0

    calls = {
        "design": design_calls,
        "curves": curve_calls,
        "form": form_calls,
        "sobol": sobol_calls,
        "total": model.call_counter,
    }
    if curve_calls:
        raise RuntimeError(f"sensitivity curves made {curve_calls} model calls; expected none")
    return StudyResult(
        cfg, names, tuple(probabilities), tuple(curves), form, sobol, reps, calls, timings
    )
