"""Stream-socket transport: a TCP gateway and device clients speaking the
same framed messages as the simulated channel (the "RS" path)."""

from __future__ import annotations

import selectors
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..solver import (
    ResourceBudget,
    SolverConfig,
    dual_u_update,
    local_x_update,
    project_onto_feasible,
    residuals,
)
from ..trace import IterationTrace, TraceRow
from .messages import (
    DataPacket,
    FrameReader,
    Register,
    VUpdate,
    ZBroadcast,
    encode_message,
)
from .session import CONVERGENCE_HOLD_ROUNDS, DeviceSpec


def _recv_message(sock: socket.socket, reader: FrameReader, timeout: float):
    sock.settimeout(timeout)
    while True:
        msgs = reader.feed(b"")
        if msgs:
            return msgs[0]
        data = sock.recv(4096)
        if not data:
            raise ConnectionError("peer closed")
        msgs = reader.feed(data)
        if msgs:
            # queue extras back through the reader by re-feeding is not
            # possible; keep a simple one-message-at-a-time lockstep protocol
            if len(msgs) > 1:
                _PENDING.setdefault(sock, []).extend(msgs[1:])
            return msgs[0]


_PENDING: dict[socket.socket, list] = {}


def _next_message(sock: socket.socket, reader: FrameReader, timeout: float):
    pending = _PENDING.get(sock)
    if pending:
        return pending.pop(0)
    return _recv_message(sock, reader, timeout)


@dataclass
class SocketSessionLog:
    trace: IterationTrace | None = None
    arrivals: dict[str, list[float]] = field(default_factory=dict)
    events: list[str] = field(default_factory=list)
    converged_round: int | None = None


class SocketGateway:
    """Serves one optimization session plus a bounded data phase over TCP."""

    def __init__(
        self,
        host: str,
        port: int,
        c: float,
        d: float,
        n_devices: int,
        cfg: SolverConfig | None = None,
        base_delay_ms: float = 0.0,
        time_scale: float = 100.0,
        packets_per_device: int = 50,
    ):
        self.host, self.port = host, port
        self.c, self.d = c, d
        self.n_devices = n_devices
        self.cfg = cfg or SolverConfig()
        self.round_timeout = max(50.0 * base_delay_ms / 1000.0, 5.0)
        self.time_scale = time_scale
        self.packets_per_device = packets_per_device
        self.log = SocketSessionLog()
        self._server = socket.create_server((host, port))
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.getsockname()[:2]

    def start(self) -> "SocketGateway":
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def wait(self, timeout: float = 120.0) -> SocketSessionLog:
        assert self._thread is not None
        self._thread.join(timeout)
        if self._thread.is_alive():
            raise TimeoutError("gateway did not finish")
        return self.log

    def _serve(self) -> None:
        conns: list[tuple[socket.socket, FrameReader, Register]] = []
        try:
            while len(conns) < self.n_devices:
                sock, _ = self._server.accept()
                reader = FrameReader()
                msg = _next_message(sock, reader, self.round_timeout)
                if not isinstance(msg, Register):
                    sock.close()
                    continue
                if any(r.device_id == msg.device_id for _, _, r in conns):
                    self.log.events.append(f"registration-rejected:{msg.device_id}")
                    sock.close()
                    continue
                conns.append((sock, reader, msg))
            # deterministic device ordering regardless of connection race
            conns.sort(key=lambda c: c[2].device_id)
            self._run_session(conns)
        except Exception as exc:  # surfaced through the log for tests
            self.log.events.append(f"gateway-error:{exc!r}")
        finally:
            for sock, _, _ in conns:
                try:
                    sock.close()
                except OSError:
                    pass
            self._server.close()

    def _run_session(self, conns) -> None:
        budget = ResourceBudget(
            self.c, self.d,
            tuple(r.a_i for _, _, r in conns),
            tuple(r.gamma_i for _, _, r in conns),
        )
        trace = IterationTrace(
            n_devices=budget.n, c=self.c, d=self.d, a=budget.a, gamma=budget.gamma
        )
        z = np.array(budget.gamma, dtype=float)
        u_prev = np.zeros(budget.n)
        hold = 0
        final = False
        for rnd in range(0, self.cfg.max_iterations + 1):
            for i, (sock, _, _) in enumerate(conns):
                sock.sendall(encode_message(ZBroadcast(rnd, float(z[i]), final)))
            if final:
                self.log.converged_round = rnd
                break
            v = np.empty(budget.n)
            for i, (sock, reader, reg) in enumerate(conns):
                try:
                    msg = _next_message(sock, reader, self.round_timeout)
                except (TimeoutError, socket.timeout):
                    self.log.events.append(f"stall:{reg.device_id}:round-{rnd}")
                    msg = VUpdate(reg.device_id, rnd + 1, float(z[i] + u_prev[i]))
                v[i] = msg.v_i
            z_new = project_onto_feasible(v, budget, self.cfg)
            primal, dual = residuals(v - u_prev, z_new, z, self.cfg.rho)
            hold = hold + 1 if (primal <= self.cfg.primal_tol and dual <= self.cfg.dual_tol) else 0
            final = hold >= CONVERGENCE_HOLD_ROUNDS
            u_prev = v - z_new
            z = z_new
            trace.append(TraceRow(iteration=rnd + 1, z=tuple(z), v=tuple(v)))
        self.log.trace = trace

        # data phase: multiplexed reads, timestamp on arrival in scaled seconds
        self.log.arrivals = {r.device_id: [] for _, _, r in conns}
        t0 = time.monotonic()
        expected = self.packets_per_device * len(conns)
        got = 0
        sel = selectors.DefaultSelector()
        for sock, reader, reg in conns:
            # drain anything buffered during the optimization phase first
            for msg in _PENDING.pop(sock, []):
                if isinstance(msg, DataPacket):
                    self.log.arrivals[reg.device_id].append(0.0)
                    got += 1
            sock.setblocking(False)
            sel.register(sock, selectors.EVENT_READ, (reader, reg))
        open_socks = {sock for sock, _, _ in conns}
        while got < expected and open_socks:
            events = sel.select(timeout=self.round_timeout)
            if not events:
                self.log.events.append("data-stall")
                break
            for key, _ in events:
                sock = key.fileobj
                reader, reg = key.data
                try:
                    data = sock.recv(4096)
                except (OSError, ConnectionError):
                    data = b""
                if not data:
                    sel.unregister(sock)
                    open_socks.discard(sock)
                    continue
                t = (time.monotonic() - t0) * self.time_scale
                for msg in reader.feed(data):
                    if isinstance(msg, DataPacket):
                        prev = self.log.arrivals[reg.device_id]
                        # packets read in one burst share an arrival instant;
                        # keep the series strictly increasing
                        if prev and t <= prev[-1]:
                            t = prev[-1] + 1e-9
                        prev.append(t)
                        got += 1
        sel.close()


def run_device_client(
    host: str,
    port: int,
    spec: DeviceSpec,
    cfg: SolverConfig | None = None,
    packets: int = 50,
    time_scale: float = 100.0,
    timeout: float = 60.0,
) -> dict:
    """Device-side loop: register, iterate consensus, then push data packets."""
    cfg = cfg or SolverConfig()
    sock = socket.create_connection((host, port), timeout=timeout)
    reader = FrameReader()
    log = {"rounds": 0, "rate": None}
    try:
        sock.sendall(encode_message(Register(spec.device_id, spec.a_i, spec.gamma_i)))
        x = spec.gamma_i
        u = 0.0
        first = True
        while True:
            msg = _next_message(sock, reader, timeout)
            if not isinstance(msg, ZBroadcast):
                continue
            if not first:
                u = dual_u_update(u, x, msg.z_i)
            if msg.final:
                break
            x = local_x_update(spec.utility, msg.z_i, u, cfg)
            sock.sendall(encode_message(VUpdate(spec.device_id, msg.iteration + 1, x + u)))
            log["rounds"] += 1
            first = False
        rate = x
        log["rate"] = rate
        interval = 1.0 / rate / time_scale
        for k in range(packets):
            time.sleep(interval)
            sock.sendall(
                encode_message(DataPacket(spec.device_id, (k + 1) / rate, spec.a_i))
            )
    finally:
        sock.close()
    return log
