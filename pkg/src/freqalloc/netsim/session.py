"""Round-based simulated gateway/device sessions (the zero-or-configured-delay
"SS" path).

Every protocol datum crosses a serialized wire (encode/decode of the real
frame bytes) so privacy properties can be audited on the byte log, while the
simulated clock keeps runs fully deterministic for a given transport seed.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..solver import (
    ResourceBudget,
    SolverConfig,
    XUpdateError,
    dual_u_update,
    local_x_update,
    project_onto_feasible,
    residuals,
)
from ..trace import IterationTrace, TraceRow
from ..utility import UtilityFunction
from .estimate import DEFAULT_WINDOW, FrequencyEstimate, estimate_dfwf
from .messages import (
    DataPacket,
    Register,
    VUpdate,
    ZBroadcast,
    decode_message,
    encode_message,
)
from .transport import TransportProfile

CONVERGENCE_HOLD_ROUNDS = 10


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    utility: UtilityFunction
    a_i: float
    gamma_i: float = 1.0


@dataclass
class DataPhaseLog:
    """Arrival times (virtual seconds) per device for one steady-state phase."""

    arrivals: dict[str, list[float]]
    rates: dict[str, float]  # transmit rate each device settled on


@dataclass
class SessionLog:
    segments: list[IterationTrace] = field(default_factory=list)
    data_phases: list[DataPhaseLog] = field(default_factory=list)
    wire_log: list[bytes] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    convergence_rounds: list[int] = field(default_factory=list)

    def estimates(
        self, phase: int = -1, window: int = DEFAULT_WINDOW,
        theoretical: dict[str, float] | None = None,
    ) -> dict[str, FrequencyEstimate]:
        log = self.data_phases[phase]
        out = {}
        for dev, ts in log.arrivals.items():
            theo = (theoretical or {}).get(dev)
            out[dev] = estimate_dfwf(ts, window, device_id=dev, theoretical_hz=theo)
        return out


class _DeviceAgent:
    def __init__(self, spec: DeviceSpec, cfg: SolverConfig):
        self.spec = spec
        self.cfg = cfg
        self.x = spec.gamma_i
        self.u = 0.0
        self.z = spec.gamma_i

    def produce_v(self) -> float:
        self.x = local_x_update(self.spec.utility, self.z, self.u, self.cfg)
        return self.x + self.u

    def receive_z(self, z_i: float) -> None:
        self.u = dual_u_update(self.u, self.x, z_i)
        self.z = z_i


def run_simulated_session(
    devices: list[DeviceSpec],
    c: float,
    d: float,
    cfg: SolverConfig | None = None,
    transport: TransportProfile | None = None,
    packets_per_device: int = 350,
    join_events: list[tuple[int, DeviceSpec]] | None = None,
    detector_hook: Callable[[int, tuple, tuple], None] | None = None,
) -> SessionLog:
    """Run registration, consensus, and steady-state data phases.

    join_events is a list of (segment_index, spec): the device registers after
    data phase ``segment_index`` completes, triggering re-optimization from
    the current state (the mid-session join path).
    """
    if cfg is None:
        cfg = SolverConfig()
    if transport is None:
        transport = TransportProfile()
    log = SessionLog()
    joins = {seg: spec for seg, spec in (join_events or [])}

    agents: list[_DeviceAgent] = []
    seen_ids: set[str] = set()

    def register(spec: DeviceSpec) -> bool:
        frame = encode_message(Register(spec.device_id, spec.a_i, spec.gamma_i))
        log.wire_log.append(frame)
        msg = decode_message(frame)
        if msg.device_id in seen_ids:
            log.events.append(f"registration-rejected:{msg.device_id}")
            return False
        seen_ids.add(msg.device_id)
        agents.append(_DeviceAgent(spec, cfg))
        return True

    for spec in devices:
        register(spec)
    if not agents:
        raise ValueError("no devices registered")

    clock = 0.0
    data_rng = {
        ag.spec.device_id: np.random.default_rng([transport.seed, i])
        for i, ag in enumerate(agents)
    }
    for seg, spec in sorted(joins.items()):
        data_rng.setdefault(spec.device_id, np.random.default_rng([transport.seed, 1000 + seg]))

    segment = 0
    while True:
        budget = ResourceBudget(
            c, d,
            tuple(ag.spec.a_i for ag in agents),
            tuple(ag.spec.gamma_i for ag in agents),
        )
        trace = IterationTrace(
            n_devices=budget.n, c=c, d=d, a=budget.a, gamma=budget.gamma
        )
        z = np.array([ag.z for ag in agents])
        u_prev = np.array([ag.u for ag in agents])
        hold = 0
        converged_round = None
        for rnd in range(1, cfg.max_iterations + 1):
            v_list: list[float] = []
            for ag in agents:
                try:
                    v_i = ag.produce_v()
                except XUpdateError as exc:
                    log.events.append(f"stall:{ag.spec.device_id}:{exc}")
                    v_i = ag.x + ag.u  # reuse the previous primal value
                frame = encode_message(
                    VUpdate(ag.spec.device_id, rnd, v_i)
                )
                log.wire_log.append(frame)
                v_list.append(decode_message(frame).v_i)
            v = np.array(v_list)
            z_new = project_onto_feasible(v, budget, cfg)
            x_rec = v - u_prev  # gateway-side reconstruction for residuals
            primal, dual = residuals(x_rec, z_new, z, cfg.rho)
            hold = hold + 1 if (primal <= cfg.primal_tol and dual <= cfg.dual_tol) else 0
            final = hold >= CONVERGENCE_HOLD_ROUNDS
            for i, ag in enumerate(agents):
                frame = encode_message(ZBroadcast(rnd, float(z_new[i]), final))
                log.wire_log.append(frame)
                msg = decode_message(frame)
                ag.receive_z(msg.z_i)
            u_prev = v - z_new
            trace.append(TraceRow(iteration=rnd, z=tuple(z_new), v=tuple(v)))
            if detector_hook is not None:
                detector_hook(rnd, tuple(z_new), tuple(v))
            z = z_new
            if final:
                converged_round = rnd
                break
        log.segments.append(trace)
        log.convergence_rounds.append(converged_round or cfg.max_iterations)
        if converged_round is None:
            log.events.append(f"segment-{segment}:non-converged")

        # steady-state data phase at the consensus rates
        rates = {ag.spec.device_id: float(ag.x) for ag in agents}
        arrivals: dict[str, list[float]] = {dev: [] for dev in rates}
        heap = []
        for dev, hz in rates.items():
            if hz <= 0:
                continue
            rng = data_rng[dev]
            t = clock + 1.0 / hz + transport.delay_s(rng, dev)
            heapq.heappush(heap, (t, dev))
        while heap:
            t, dev = heapq.heappop(heap)
            frame = encode_message(
                DataPacket(dev, t, next(ag.spec.a_i for ag in agents
                                        if ag.spec.device_id == dev))
            )
            log.wire_log.append(frame)
            arrivals[dev].append(decode_message(frame).timestamp)
            if len(arrivals[dev]) < packets_per_device:
                rng = data_rng[dev]
                heapq.heappush(
                    heap, (t + 1.0 / rates[dev] + transport.delay_s(rng, dev), dev)
                )
        log.data_phases.append(DataPhaseLog(arrivals=arrivals, rates=rates))
        clock = max(
            (ts[-1] for ts in arrivals.values() if ts), default=clock
        )

        if segment in joins:
            register(joins[segment])
            segment += 1
            continue
        break

    return log


def resource_usage_series(
    log: SessionLog,
    a_map: dict[str, float],
    phase: int = -1,
    window: int = DEFAULT_WINDOW,
) -> list[tuple[float, float, float]]:
    """(time, sum of estimated rates, sum of a_i * estimated rates) evaluated
    at every packet arrival once each device has a full estimation window."""
    arrivals = log.data_phases[phase].arrivals
    merged = sorted(
        (t, dev) for dev, ts in arrivals.items() for t in ts
    )
    counts = {dev: 0 for dev in arrivals}
    out = []
    for t, dev in merged:
        counts[dev] += 1
        if any(k < window for k in counts.values()):
            continue
        total_hz = 0.0
        total_bytes = 0.0
        for dv, k in counts.items():
            tail = arrivals[dv][max(0, k - window) : k]
            hz = (len(tail) - 1) / (tail[-1] - tail[0])
            total_hz += hz
            total_bytes += a_map[dv] * hz
        out.append((t, total_hz, total_bytes))
    return out
