"""Manipulation injection, labeled scenario generation, the rule-based
threshold detector, and detection metrics.

Labels: 0 = normal operation (including legitimate systemic budget changes),
1 = utility-function swap plus input shift, 2 = data-size change,
3 = input shift only.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .solver import (
    AdmmState,
    ResourceBudget,
    SolverConfig,
    XUpdateError,
    admm_step,
)
from .trace import PHASE_ANOMALOUS, PHASE_NORMAL, IterationTrace, TraceRow
from .utility import UtilityFunction, anomaly_demo_set, swap_candidate_set

LABEL_NORMAL = 0
LABEL_FUNCTION_SWAP = 1
LABEL_DATA_SIZE = 2
LABEL_INPUT_SHIFT = 3

STANDARD_THRESHOLDS = (0.01, 0.05, 0.10, 0.15, 0.30, 0.50)

NORMAL_PHASE_RANGE = (100, 120)
ANOMALOUS_PHASE_RANGE = (50, 70)

INPUT_FACTOR_RANGE = (-3.0, 3.0)
SIZE_FACTOR_RANGE = (-1.0, 1.0)
MWF_FACTOR_RANGE = (-3.0, 3.0)
STORAGE_FACTOR_RANGE = (-5.0, 5.0)

MIN_PACKET_SIZE = 0.1


class InjectionError(ValueError):
    pass


@dataclass(frozen=True)
class ManipulationSpec:
    """One manipulation event; only the fields relevant to its label are set."""

    label: int
    target: int | None = None
    input_factor: float | None = None
    size_factor: float | None = None
    mwf_factor: float | None = None
    storage_factor: float | None = None
    new_function: UtilityFunction | None = None

    def __post_init__(self):
        allowed = {
            LABEL_NORMAL: {"mwf_factor", "storage_factor"},
            LABEL_FUNCTION_SWAP: {"target", "input_factor", "new_function"},
            LABEL_DATA_SIZE: {"target", "size_factor"},
            LABEL_INPUT_SHIFT: {"target", "input_factor"},
        }
        if self.label not in allowed:
            raise InjectionError(f"unknown label {self.label}")
        optional = ("target", "input_factor", "size_factor", "mwf_factor",
                    "storage_factor", "new_function")
        for name in optional:
            value = getattr(self, name)
            if value is not None and name not in allowed[self.label]:
                raise InjectionError(f"field {name} is not valid for label {self.label}")
        ranges = {
            "input_factor": INPUT_FACTOR_RANGE,
            "size_factor": SIZE_FACTOR_RANGE,
            "mwf_factor": MWF_FACTOR_RANGE,
            "storage_factor": STORAGE_FACTOR_RANGE,
        }
        for name, (lo, hi) in ranges.items():
            value = getattr(self, name)
            if value is not None and not lo <= value <= hi:
                raise InjectionError(f"{name}={value} outside [{lo}, {hi}]")
        if self.label != LABEL_NORMAL and self.target is None:
            raise InjectionError("device-level manipulations need a target index")
        if self.label == LABEL_FUNCTION_SWAP and self.new_function is None:
            raise InjectionError("label 1 needs a replacement function")


def inject(
    spec: ManipulationSpec,
    functions: list[UtilityFunction],
    budget: ResourceBudget,
) -> tuple[list[UtilityFunction], ResourceBudget]:
    """Apply one manipulation; returns the mutated problem (inputs untouched)."""
    functions = list(functions)
    if spec.label == LABEL_NORMAL:
        c = budget.c + (spec.mwf_factor or 0.0)
        d = budget.d + (spec.storage_factor or 0.0)
        if c <= 0 or d <= 0:
            raise InjectionError("systemic change would make a budget non-positive")
        return functions, replace(budget, c=c, d=d)
    t = spec.target
    if not 0 <= t < budget.n:
        raise InjectionError(f"target {t} out of range for {budget.n} devices")
    if spec.label == LABEL_INPUT_SHIFT:
        functions[t] = functions[t].shifted(spec.input_factor or 0.0)
        return functions, budget
    if spec.label == LABEL_FUNCTION_SWAP:
        functions[t] = spec.new_function.shifted(spec.input_factor or 0.0)
        return functions, budget
    # label 2: data-size change, floored to keep packet sizes positive
    a = list(budget.a)
    a[t] = max(a[t] + (spec.size_factor or 0.0), MIN_PACKET_SIZE)
    return functions, replace(budget, a=tuple(a))


@dataclass(frozen=True)
class Phase:
    start: int  # first row index of the phase (0-based)
    end: int  # one past the last row index
    label: int
    spec: ManipulationSpec | None


@dataclass
class Scenario:
    """A generated labeled stream plus the phase schedule that produced it."""

    trace: IterationTrace
    phases: list[Phase]
    events: list[str] = field(default_factory=list)

    @property
    def remediation_iterations(self) -> list[int]:
        """Row indices at which a manipulated phase ended and the system
        was restored (the detector may re-baseline after these)."""
        return [p.end for p in self.phases if p.spec is not None]


def _draw_spec(rng: np.random.Generator, label: int, target: int) -> ManipulationSpec:
    if label == LABEL_NORMAL:
        return ManipulationSpec(
            label,
            mwf_factor=float(rng.uniform(*MWF_FACTOR_RANGE)),
            storage_factor=float(rng.uniform(*STORAGE_FACTOR_RANGE)),
        )
    if label == LABEL_FUNCTION_SWAP:
        candidates = swap_candidate_set()
        return ManipulationSpec(
            label,
            target=target,
            input_factor=float(rng.uniform(*INPUT_FACTOR_RANGE)),
            new_function=candidates[int(rng.integers(len(candidates)))],
        )
    if label == LABEL_DATA_SIZE:
        return ManipulationSpec(
            label, target=target, size_factor=float(rng.uniform(*SIZE_FACTOR_RANGE))
        )
    return ManipulationSpec(
        label, target=target, input_factor=float(rng.uniform(*INPUT_FACTOR_RANGE))
    )


def generate_scenario(
    seed: int,
    length: int,
    label_mix: dict[int, float] | None = None,
    functions: list[UtilityFunction] | None = None,
    budget: ResourceBudget | None = None,
    cfg: SolverConfig | None = None,
    target_device: int | None = 0,
    observation_noise_std: float = 0.0,
    stale_probability: float = 0.0,
) -> Scenario:
    """Alternate normal and manipulated phases for `length` iterations.

    Normal phases last 100-120 iterations and manipulated phases 50-70, both
    drawn uniformly. Each manipulated phase draws one ManipulationSpec from
    `label_mix` (weights over labels); the system is restored at phase end.
    Deterministic given the seed. `observation_noise_std` and
    `stale_probability` perturb only the *recorded* z/v values, mimicking a
    lossy real channel; the underlying consensus loop is untouched.
    """
    functions = list(functions) if functions is not None else anomaly_demo_set()
    budget = budget or ResourceBudget(10.0, 20.0, (2.0, 3.0, 5.0), (1.0,) * 3)
    cfg = cfg or SolverConfig()
    mix = dict(label_mix or {LABEL_FUNCTION_SWAP: 1.0, LABEL_DATA_SIZE: 1.0,
                             LABEL_INPUT_SHIFT: 1.0})
    labels = sorted(mix)
    weights = np.array([mix[k] for k in labels], dtype=float)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ValueError("label mix weights must be non-negative and not all zero")
    weights /= weights.sum()
    if length < NORMAL_PHASE_RANGE[0] + ANOMALOUS_PHASE_RANGE[0]:
        raise ValueError("length must cover at least one normal + one manipulated phase")

    rng = np.random.default_rng(seed)
    noise_rng = np.random.default_rng([seed, 1])
    trace = IterationTrace(
        n_devices=budget.n, c=budget.c, d=budget.d, a=budget.a, gamma=budget.gamma
    )
    scenario = Scenario(trace=trace, phases=[])
    state = AdmmState.initial(budget)
    prev_obs: tuple[np.ndarray, np.ndarray] | None = None
    anomalous = False

    def record(label: int, phase_name: str) -> None:
        nonlocal prev_obs, state
        z_obs = state.z.copy()
        v_obs = v.copy()
        if observation_noise_std > 0:
            z_obs += noise_rng.normal(0.0, observation_noise_std, budget.n)
            v_obs += noise_rng.normal(0.0, observation_noise_std, budget.n)
        if stale_probability > 0 and prev_obs is not None:
            stale = noise_rng.random(budget.n) < stale_probability
            z_obs = np.where(stale, prev_obs[0], z_obs)
            v_obs = np.where(stale, prev_obs[1], v_obs)
        prev_obs = (z_obs, v_obs)
        trace.append(
            TraceRow(iteration=len(trace) + 1, z=tuple(z_obs), v=tuple(v_obs),
                     label=label, phase=phase_name)
        )

    while len(trace) < length:
        if not anomalous:
            dur = int(rng.integers(NORMAL_PHASE_RANGE[0], NORMAL_PHASE_RANGE[1] + 1))
            dur = min(dur, length - len(trace))
            start = len(trace)
            for _ in range(dur):
                state, v, _ = admm_step(functions, budget, state, cfg)
                record(LABEL_NORMAL, PHASE_NORMAL)
            scenario.phases.append(Phase(start, len(trace), LABEL_NORMAL, None))
        else:
            dur = int(rng.integers(ANOMALOUS_PHASE_RANGE[0], ANOMALOUS_PHASE_RANGE[1] + 1))
            dur = min(dur, length - len(trace))
            label = int(rng.choice(labels, p=weights))
            target = (target_device if target_device is not None
                      else int(rng.integers(budget.n)))
            start = len(trace)
            saved = AdmmState(state.x.copy(), state.z.copy(), state.u.copy(),
                              state.iteration)
            phase_name = PHASE_NORMAL if label == LABEL_NORMAL else PHASE_ANOMALOUS
            for attempt in range(10):
                spec = _draw_spec(rng, label, target)
                try:
                    mut_functions, mut_budget = inject(spec, functions, budget)
                except InjectionError:
                    scenario.events.append(f"injection-retry:invalid-spec:row-{start}")
                    continue
                local = AdmmState(saved.x.copy(), saved.z.copy(), saved.u.copy(),
                                  saved.iteration)
                steps: list[tuple[AdmmState, np.ndarray]] = []
                try:
                    for _ in range(dur):
                        local, v_step, _ = admm_step(mut_functions, mut_budget,
                                                     local, cfg)
                        steps.append((local, v_step))
                except XUpdateError:
                    scenario.events.append(
                        f"injection-retry:domain-conflict:row-{start}"
                    )
                    continue
                break
            else:
                raise InjectionError("could not draw a runnable manipulation")
            for st, v in steps:
                state = st
                record(label, phase_name)
            scenario.phases.append(Phase(start, len(trace), label, spec))
        anomalous = not anomalous
    return scenario


# ---------------------------------------------------------------------------
# rule-based detection


@dataclass(frozen=True)
class DetectorVerdict:
    iteration: int
    alarms: tuple[bool, ...]
    predicted_label: int  # 0 = normal, 1 = anomalous (two-class)
    threshold: float


def compute_baseline(z_rows, window: int = 20) -> np.ndarray:
    """Normal-operation reference: mean of the last `window` converged rows."""
    rows = np.asarray(z_rows, dtype=float)
    if len(rows) < window:
        raise ValueError(f"need at least {window} rows to compute a baseline")
    return rows[-window:].mean(axis=0)


class RuleDetector:
    """Component-wise relative deviation alarm against a normal baseline.

    A device alarms when its observed z strays from the baseline by more than
    `threshold` (a fraction of the baseline value). After a remediation notice
    the detector waits for the stream to re-converge, then re-baselines on the
    next `baseline_window` rows.
    """

    def __init__(
        self,
        z_normal,
        gamma,
        threshold: float,
        baseline_window: int = 20,
        stability_tol: float = 1e-3,
    ):
        if threshold <= 0:
            raise ValueError("threshold must be a positive fraction")
        self.threshold = float(threshold)
        self.gamma = np.asarray(gamma, dtype=float)
        self.z_normal = self._guard(np.asarray(z_normal, dtype=float))
        self.baseline_window = baseline_window
        self.stability_tol = stability_tol
        self._recent: list[np.ndarray] = []
        self._rebaseline_pending = False

    def _guard(self, z_normal: np.ndarray) -> np.ndarray:
        # zero baselines would make the relative test vacuous
        return np.maximum(z_normal, self.gamma)

    def notify_remediation(self) -> None:
        self._rebaseline_pending = True
        self._recent.clear()

    def step(self, iteration: int, z) -> DetectorVerdict:
        z = np.asarray(z, dtype=float)
        if self._rebaseline_pending:
            self._recent.append(z.copy())
            if len(self._recent) > self.baseline_window:
                self._recent.pop(0)
            if len(self._recent) == self.baseline_window:
                block = np.asarray(self._recent)
                drift = np.abs(block - block.mean(axis=0)).max()
                if drift < self.stability_tol:
                    self.z_normal = self._guard(block.mean(axis=0))
                    self._rebaseline_pending = False
                    self._recent.clear()
        deviation = np.abs(z - self.z_normal)
        alarms = deviation > self.threshold * self.z_normal
        return DetectorVerdict(
            iteration=iteration,
            alarms=tuple(bool(a) for a in alarms),
            predicted_label=1 if alarms.any() else 0,
            threshold=self.threshold,
        )


def rule_detect(
    trace: IterationTrace,
    threshold: float,
    z_normal=None,
    remediation_iterations=(),
    warmup: int = 100,
) -> list[DetectorVerdict]:
    """Run the rule detector over a whole trace.

    When `z_normal` is omitted it is computed from the last 20 rows of the
    `warmup` prefix (which must be normal operation); verdicts for the warmup
    rows are emitted as normal. `remediation_iterations` are row indices after
    which the system was restored; the detector re-baselines once the stream
    re-converges past each one.
    """
    zs = trace.z_matrix()
    if z_normal is None:
        if len(zs) < warmup:
            raise ValueError("trace shorter than the baseline warmup")
        z_normal = compute_baseline(zs[:warmup])
        start = warmup
    else:
        start = 0
    detector = RuleDetector(z_normal, trace.gamma, threshold)
    pending = sorted(set(int(r) for r in remediation_iterations))
    verdicts: list[DetectorVerdict] = []
    none = tuple(False for _ in range(trace.n_devices))
    for idx, row in enumerate(trace.rows):
        if pending and idx == pending[0]:
            detector.notify_remediation()
            pending.pop(0)
        if idx < start:
            verdicts.append(DetectorVerdict(row.iteration, none, 0, threshold))
        else:
            verdicts.append(detector.step(row.iteration, row.z))
    return verdicts


# ---------------------------------------------------------------------------
# scoring


@dataclass(frozen=True)
class DetectionMetrics:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    confusion: tuple[tuple[int, ...], ...]  # rows = truth, cols = predicted
    per_label_accuracy: dict[int, float]


def score(predicted, truth) -> DetectionMetrics:
    """Binary/multiclass tallies. Positives are any non-zero label."""
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValueError("prediction and truth streams differ in length")
    if not predicted:
        raise ValueError("empty streams")
    classes = sorted(set(truth) | set(predicted))
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    for p, t in zip(predicted, truth):
        confusion[index[t], index[p]] += 1
    correct = sum(int(p == t) for p, t in zip(predicted, truth))
    tp = sum(1 for p, t in zip(predicted, truth) if t != 0 and p != 0)
    fp = sum(1 for p, t in zip(predicted, truth) if t == 0 and p != 0)
    fn = sum(1 for p, t in zip(predicted, truth) if t != 0 and p == 0)
    tn = sum(1 for p, t in zip(predicted, truth) if t == 0 and p == 0)
    per_label: dict[int, float] = {}
    for c in sorted(set(truth)):
        rows = [(p, t) for p, t in zip(predicted, truth) if t == c]
        if c == 0:
            ok = sum(1 for p, _ in rows if p == 0)
        else:
            # for two-class detectors any anomalous call counts as correct
            ok = sum(1 for p, _ in rows if p == c or (p == 1 and c != 0))
        per_label[c] = ok / len(rows)
    return DetectionMetrics(
        accuracy=correct / len(truth),
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        specificity=tn / (tn + fp) if tn + fp else 0.0,
        confusion=tuple(tuple(int(x) for x in row) for row in confusion),
        per_label_accuracy=per_label,
    )


def sweep_thresholds(
    trace: IterationTrace,
    thresholds=STANDARD_THRESHOLDS,
    remediation_iterations=(),
    warmup: int = 100,
) -> dict[float, DetectionMetrics]:
    """Score the rule detector at each threshold against the trace labels."""
    labels = trace.labels()
    truth = [0 if lab == 0 else 1 for lab in labels]
    out: dict[float, DetectionMetrics] = {}
    for tau in thresholds:
        verdicts = rule_detect(trace, tau, remediation_iterations=remediation_iterations,
                               warmup=warmup)
        predicted = [v.predicted_label for v in verdicts]
        metrics = score(predicted, truth)
        # per-label accuracy against the full label alphabet: an anomalous
        # call is correct on any non-zero label
        per_label: dict[int, float] = {}
        for c in sorted(set(labels)):
            rows = [p for p, lab in zip(predicted, labels) if lab == c]
            ok = sum(1 for p in rows if (p == 0) == (c == 0))
            per_label[c] = ok / len(rows)
        out[tau] = replace(metrics, per_label_accuracy=per_label)
    return out
