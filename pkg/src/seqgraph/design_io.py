"""Design/scenario document loading and the stage-data CSV schema.

Designs are YAML mappings with a fixed key set; unknown keys are rejected
so typos fail loudly. All structural invariants (weights, transition rows,
fractions, level parameters) are validated on load and reported as
:class:`ValidationError` naming the violated invariant; malformed YAML is
reported as :class:`ParseError` with line/column.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import yaml

from .boundaries import HypothesisPlan, PValueFamily, SpendingFunction, validate_fractions
from .errors import ParseError, SeqGraphError, ValidationError
from .graph import GraphSpec, validate_graph
from .informative import IterationConfig
from .simulate import ScenarioSpec

DESIGN_KEYS = {
    "alpha",
    "hypotheses",
    "initial_weights",
    "transition",
    "exhaustion_weights",
    "stages",
    "spending",
    "information_fractions",
    "q",
    "epsilon",
    "delta0",
}
REQUIRED_DESIGN_KEYS = {
    "alpha",
    "initial_weights",
    "transition",
    "stages",
    "spending",
    "information_fractions",
}
SCENARIO_KEYS = {
    "name",
    "design",
    "theta",
    "correlation",
    "information",
    "stop_policy",
    "n_reps",
    "seed",
    "runs",
}
DATA_COLUMNS = ["hypothesis", "stage", "estimate", "std_error", "info_fraction", "stopped"]


@dataclass(frozen=True)
class ValidatedDesign:
    """A design document with all invariants checked.

    Attributes:
        graph: validated graphical test.
        plans: one HypothesisPlan per hypothesis.
        alpha: overall one-sided level.
        names: hypothesis display names.
        q: information weight for the informative bounds.
        epsilon: bracket-gap target.
        delta0: initial upper-level slack (None: automatic).
    """

    graph: GraphSpec
    plans: list
    alpha: float
    names: list
    q: float = 0.3
    epsilon: float = 1e-6
    delta0: float | None = None

    @property
    def m(self):
        return self.graph.m

    @property
    def n_stages(self):
        return len(self.plans[0].fractions)

    def iteration_config(self) -> IterationConfig:
        return IterationConfig(q=self.q, epsilon=self.epsilon, delta0=self.delta0)


def _load_yaml(path):
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        if mark is not None:
            raise ParseError(str(getattr(exc, "problem", exc)), mark.line + 1, mark.column + 1)
        raise ParseError(str(exc))
    if not isinstance(doc, dict):
        raise ParseError("document root must be a mapping")
    return doc


def _check_keys(doc, allowed, required, what):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ValidationError(f"unknown {what} keys: {', '.join(unknown)}")
    missing = sorted(required - set(doc))
    if missing:
        raise ValidationError(f"missing {what} keys: {', '.join(missing)}")


def _spending(entry) -> SpendingFunction:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ValidationError("spending must be a mapping with a 'kind'")
    extra = set(entry) - {"kind", "rho"}
    if extra:
        raise ValidationError(f"unknown spending keys: {', '.join(sorted(extra))}")
    return SpendingFunction(entry["kind"], entry.get("rho"))


def _scalar(doc, key, lo, hi, default=None):
    if key not in doc:
        return default
    v = doc[key]
    if not isinstance(v, (int, float)) or not lo < float(v) < hi:
        raise ValidationError(f"{key} must be a number in ({lo}, {hi})")
    return float(v)


def design_from_dict(doc) -> ValidatedDesign:
    """Validate an already-parsed design mapping."""
    _check_keys(doc, DESIGN_KEYS, REQUIRED_DESIGN_KEYS, "design")
    alpha = _scalar(doc, "alpha", 0.0, 1.0)
    try:
        graph = validate_graph(
            doc["initial_weights"], doc["transition"], doc.get("exhaustion_weights")
        )
    except SeqGraphError as exc:
        raise ValidationError(str(exc)) from exc
    m = graph.m
    names = doc.get("hypotheses") or [f"H{j + 1}" for j in range(m)]
    if len(names) != m or len(set(names)) != m:
        raise ValidationError("hypotheses must be unique names, one per hypothesis")
    stages = doc["stages"]
    fractions = doc["information_fractions"]
    if not isinstance(stages, int) or stages < 1:
        raise ValidationError("stages must be a positive integer")
    if not isinstance(fractions, list) or len(fractions) != stages:
        raise ValidationError("information_fractions must list one fraction per stage")
    try:
        fractions = tuple(validate_fractions(fractions))
    except SeqGraphError as exc:
        raise ValidationError(str(exc)) from exc
    spending = doc["spending"]
    try:
        if isinstance(spending, list):
            if len(spending) != m:
                raise ValidationError("per-hypothesis spending needs one entry per hypothesis")
            plans = [HypothesisPlan(_spending(s), fractions) for s in spending]
        else:
            plans = [HypothesisPlan(_spending(spending), fractions)] * m
    except SeqGraphError as exc:
        raise ValidationError(str(exc)) from exc
    q = _scalar(doc, "q", 0.0, 1.0, default=0.3)
    epsilon = _scalar(doc, "epsilon", 0.0, 1.0, default=1e-6)
    delta0 = _scalar(doc, "delta0", 0.0, 1.0 - alpha, default=None)
    design = ValidatedDesign(
        graph=graph, plans=plans, alpha=alpha, names=list(names), q=q, epsilon=epsilon, delta0=delta0
    )
    design.iteration_config()  # fail fast on inconsistent knobs
    return design


def load_design(path) -> ValidatedDesign:
    """Load and validate a design document.

    Raises:
        ParseError: malformed YAML, with line/column when available.
        ValidationError: a named invariant is violated.
    """
    return design_from_dict(_load_yaml(path))


def serialize_design(design: ValidatedDesign) -> dict:
    """Plain mapping that loads back to a semantically identical design."""
    doc = {
        "alpha": design.alpha,
        "hypotheses": list(design.names),
        "initial_weights": design.graph.weights.tolist(),
        "transition": design.graph.transition.tolist(),
        "stages": design.n_stages,
        "spending": [
            {"kind": p.spending.kind, **({"rho": p.spending.rho} if p.spending.rho else {})}
            for p in design.plans
        ],
        "information_fractions": [float(t) for t in design.plans[0].fractions],
        "q": design.q,
        "epsilon": design.epsilon,
    }
    if design.graph.exhaustion_weights is not None:
        doc["exhaustion_weights"] = design.graph.exhaustion_weights.tolist()
    if design.delta0 is not None:
        doc["delta0"] = design.delta0
    return doc


def dump_design(design: ValidatedDesign, path):
    with open(path, "w") as fh:
        yaml.safe_dump(serialize_design(design), fh, sort_keys=True)


def load_scenario(path) -> tuple[ScenarioSpec, ValidatedDesign, list]:
    """Load a simulation scenario (design plus truth and run list).

    Returns:
        (spec, design, runs) where runs is a list of mappings with keys
        ``metric`` (fwer | coverage | median-coverage), ``procedure`` or
        ``variant``, and optional ``lambda``/``stage``.
    """
    doc = _load_yaml(path)
    _check_keys(doc, SCENARIO_KEYS, {"design", "theta", "n_reps", "seed"}, "scenario")
    design = design_from_dict(doc["design"])
    policy = doc.get("stop_policy", "stop-on-reject")
    if isinstance(policy, dict):
        policy = {int(k): list(v) for k, v in policy.items()}
    try:
        spec = ScenarioSpec(
            graph=design.graph,
            plans=design.plans,
            theta=doc["theta"],
            correlation=doc.get("correlation"),
            information=doc.get("information"),
            stop_policy=policy,
            n_reps=int(doc["n_reps"]),
            seed=int(doc["seed"]),
            name=str(doc.get("name", "scenario")),
        )
    except SeqGraphError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    runs = doc.get("runs") or [{"metric": "fwer", "procedure": "gsd-s"}]
    if not isinstance(runs, list) or not all(isinstance(r, dict) for r in runs):
        raise ValidationError("runs must be a list of mappings")
    return spec, design, runs


@dataclass(frozen=True)
class StageData:
    """Observations parsed from a stage-data CSV.

    Attributes:
        estimates/std_errors: (m, K) arrays, NaN where unobserved.
        taus: 0-based final data stage per hypothesis (K-1 if never stopped).
        last_stage: largest 0-based stage with any observation.
    """

    estimates: np.ndarray
    std_errors: np.ndarray
    taus: np.ndarray
    last_stage: int

    def family(self, design: ValidatedDesign) -> PValueFamily:
        return PValueFamily(design.plans, self.estimates, self.std_errors)


def read_stage_data(path, design: ValidatedDesign) -> StageData:
    """Parse the stage-data CSV against a design.

    Columns: hypothesis (name or 1-based index), stage (1-based), estimate,
    std_error, info_fraction (must match the design schedule), stopped.
    """
    m, K = design.m, design.n_stages
    est = np.full((m, K), np.nan)
    se = np.full((m, K), np.nan)
    taus = np.full(m, K - 1)
    index = {name: j for j, name in enumerate(design.names)}
    fractions = design.plans[0].fractions
    last = -1
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != DATA_COLUMNS:
            raise ValidationError(f"data CSV must have columns {','.join(DATA_COLUMNS)}")
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            n_rows += 1
            hyp = row["hypothesis"].strip()
            j = index.get(hyp)
            if j is None:
                if hyp.isdigit() and 1 <= int(hyp) <= m:
                    j = int(hyp) - 1
                else:
                    raise ValidationError(f"unknown hypothesis {hyp!r} (line {lineno})")
            try:
                k = int(row["stage"]) - 1
                e, s, t = (float(row[c]) for c in ("estimate", "std_error", "info_fraction"))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"malformed numeric field (line {lineno})") from exc
            if not 0 <= k < K:
                raise ValidationError(f"stage {k + 1} outside the planned schedule (line {lineno})")
            if abs(t - fractions[k]) > 1e-9:
                raise ValidationError(
                    f"info_fraction {t} does not match the stage-{k + 1} schedule "
                    f"value {fractions[k]} (line {lineno})"
                )
            if s <= 0:
                raise ValidationError(f"std_error must be positive (line {lineno})")
            stopped = row["stopped"].strip().lower()
            if stopped not in ("true", "false"):
                raise ValidationError(f"stopped must be true or false (line {lineno})")
            est[j, k] = e
            se[j, k] = s
            if stopped == "true":
                taus[j] = min(taus[j], k)
            last = max(last, k)
    if n_rows == 0:
        raise ValidationError("data CSV contains no observations")
    return StageData(estimates=est, std_errors=se, taus=taus, last_stage=last)
