"""Three-node pipelined execution of a partition plan, plus the monolithic
oracle it must match.

Each node walks the spatial layers in order. Per layer it assembles its
input slab from its own previous output plus whatever boundary rows the
exchange schedule delivers, computes its owned output rows, and ships the
rows its peers need. Secondaries compute host-needed boundary rows first
and send them before touching the rest of their segment, so the host is
never idling on a row that could already have been sent. After the last
spatial layer the host merges both segments and runs the classifier head.

Every send/receive/compute is appended to a per-node event log for the
scheduling tests; logs are deterministic up to timestamps.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .framing import Frame, handshake_frame, parse_handshake
from .layers import LayerKind, apply_spatial_rows, fully_connected, global_avg_pool
from .models import ModelSpec, get_model, make_input, make_weights
from .planner import (
    ExchangeStep,
    PartitionPlan,
    Role,
    build_plan,
    plan_from_json,
    plan_to_json,
    validate_plan,
)
from .tensor import Tensor
from .transport import TransportError, TransportTimeout, inproc_pair

DEFAULT_TIMEOUT_S = 30.0

NODE_IDS = {Role.HOST: 0, Role.ED1: 1, Role.ED2: 2}
NODE_BY_ID = {v: k for k, v in NODE_IDS.items()}


class SessionError(RuntimeError):
    pass


class SessionTimeout(SessionError):
    """A peer did not produce a required frame within the session timeout."""


class OffloadChoice(Enum):
    RAW_IMAGE = "raw_image"
    HALF_TENSOR = "half_tensor"


def offload_choice(image_size_bits: int, segment_rows: int, width: int, channels: int) -> OffloadChoice:
    """Ship the encoded image only when strictly smaller than the tensor segment."""
    if min(image_size_bits, segment_rows, width, channels) <= 0:
        raise ValueError("sizes must be positive")
    segment_bits = segment_rows * width * channels * 32
    if image_size_bits < segment_bits:
        return OffloadChoice.RAW_IMAGE
    return OffloadChoice.HALF_TENSOR


@dataclass
class EventLog:
    node: str
    events: list[dict] = field(default_factory=list)

    def add(self, event: str, layer: int, rows: int) -> None:
        self.events.append(
            {
                "t_ns": time.monotonic_ns(),
                "node": self.node,
                "event": event,
                "layer": layer,
                "rows": rows,
            }
        )

    def dump_jsonl(self, path: str) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev) + "\n")

    def sequence(self) -> list[tuple]:
        """Timestamp-free view used by determinism tests."""
        return [(e["node"], e["event"], e["layer"], e["rows"]) for e in self.events]


def monolithic_infer(model: ModelSpec, weights, x: Tensor) -> np.ndarray:
    """Run every layer on one node; the oracle for distributed equivalence."""
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model {model.input_shape}")
    for i in range(model.n_spatial):
        spec = model.layers[i]
        x = apply_spatial_rows(x, spec, weights[i], (0, spec.out_height(x.height)), x.height)
    return _run_head(model, weights, x)


def _run_head(model: ModelSpec, weights, x: Tensor) -> np.ndarray:
    vec: np.ndarray | None = None
    for i in range(model.n_spatial, len(model.layers)):
        spec = model.layers[i]
        if spec.kind is LayerKind.GLOBAL_AVG_POOL:
            x = global_avg_pool(x)
        elif spec.kind is LayerKind.FULLY_CONNECTED:
            vec = fully_connected(x.flatten() if vec is None else vec, weights[i], spec.activation)
        else:
            raise ValueError(f"unexpected head layer {spec.kind}")
    if vec is None:
        raise ValueError("model has no classifier head")
    return vec


class _Node:
    """Shared per-node machinery: frame buffering, slab assembly, compute."""

    def __init__(self, role, model, weights, plan, transports, timeout, log):
        self.role = role
        self.model = model
        self.weights = weights
        self.plan = plan
        self.transports = transports  # peer role -> transport
        self.timeout = timeout
        self.log = log or EventLog(role.value)
        self._stash: dict[tuple, Frame] = {}
        for step in plan.exchange_schedule:
            if Role.HOST not in (step.sender, step.receiver):
                raise SessionError("plan requires a secondary-to-secondary link")
        self._heights = model.spatial_heights()

    # --- exchange ---------------------------------------------------------

    def _expected(self, layer: int) -> list[ExchangeStep]:
        return [s for s in self.plan.steps_before(layer) if s.receiver is self.role]

    def _outgoing(self, layer: int) -> list[ExchangeStep]:
        return [s for s in self.plan.steps_before(layer) if s.sender is self.role]

    def _recv_step(self, step: ExchangeStep) -> Frame:
        key = (step.before_layer, step.sender, step.row_start)
        if key in self._stash:
            return self._stash.pop(key)
        transport = self.transports[step.sender]
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise SessionTimeout(
                    f"{self.role.value}: timed out waiting for rows "
                    f"[{step.row_start}, {step.row_end}) before layer {step.before_layer}"
                )
            try:
                frame = transport.receive(timeout=remaining)
            except TransportTimeout:
                continue
            except TransportError as exc:
                raise SessionError(f"{self.role.value}: transport failed: {exc}") from exc
            got = (frame.layer, NODE_BY_ID[frame.sender], frame.row_start)
            if got == key:
                return frame
            self._stash[got] = frame

    def _gather(self, layer: int) -> list[tuple[int, np.ndarray]]:
        rows = []
        for step in self._expected(layer):
            frame = self._recv_step(step)
            if frame.row_count != step.rows:
                raise SessionError(
                    f"{self.role.value}: frame carries {frame.row_count} rows, "
                    f"schedule says {step.rows}"
                )
            self.log.add("recv", layer, frame.row_count)
            rows.append((frame.row_start, frame.values))
        return rows

    def _send_rows(self, step: ExchangeStep, out: Tensor, out_start: int) -> None:
        lo, hi = step.row_start - out_start, step.row_end - out_start
        frame = Frame.from_rows(
            step.before_layer, NODE_IDS[self.role], step.row_start, out.data[lo:hi]
        )
        self.transports[step.receiver].send(frame)
        self.log.add("send", step.before_layer, step.rows)

    # --- compute ----------------------------------------------------------

    def _slab(self, layer, own: Tensor | None, own_start: int, received) -> tuple[Tensor, int]:
        """Contiguous input rows covering this node's receptive field."""
        spec = self.model.layers[layer]
        from .planner import receptive_field

        lo, hi = receptive_field(
            spec, self.plan.parts[layer].out_ranges[self.role], self._heights[layer]
        )
        if own is not None and own_start <= lo and own_start + own.height >= hi:
            return own, own_start
        pieces = list(received)
        if own is not None:
            pieces.append((own_start, own.data))
        width = pieces[0][1].shape[1]  # all pieces share the feature-map width
        ch = spec.in_channels
        arr = np.zeros((hi - lo, width, ch), dtype=np.float32)
        covered = np.zeros(hi - lo, dtype=bool)
        for start, data in pieces:
            s, e = max(start, lo), min(start + data.shape[0], hi)
            if e > s:
                arr[s - lo : e - lo] = data[s - start : e - start]
                covered[s - lo : e - lo] = True
        if not covered.all():
            missing = np.flatnonzero(~covered) + lo
            raise SessionError(
                f"{self.role.value}: input rows {missing.tolist()} missing at layer {layer}"
            )
        return Tensor(arr), lo

    def _compute_chunk(self, layer: int, slab: Tensor, slab_start: int, rng: tuple[int, int]) -> Tensor:
        spec = self.model.layers[layer]
        self.log.add("compute_start", layer, rng[1] - rng[0])
        out = apply_spatial_rows(slab, spec, self.weights[layer], rng, self._heights[layer], slab_start)
        self.log.add("compute_end", layer, rng[1] - rng[0])
        return out

    def run_spatial(self, initial: Tensor | None) -> tuple[Tensor, int]:
        """Walk all spatial layers; returns the final owned segment."""
        own: Tensor | None = initial
        own_start = 0
        for layer in range(self.plan.n_spatial):
            received = self._gather(layer)
            slab, slab_start = self._slab(layer, own, own_start, received)
            olo, ohi = self.plan.parts[layer].out_ranges[self.role]
            outgoing = self._outgoing(layer + 1)
            boundary = self._boundary_range(outgoing, (olo, ohi))
            if boundary is None or self.role is Role.HOST:
                # host zones are small; compute whole, then ship both edges
                out = self._compute_chunk(layer, slab, slab_start, (olo, ohi))
                for step in outgoing:
                    self._send_rows(step, out, olo)
            else:
                first = self._compute_chunk(layer, slab, slab_start, boundary)
                for step in outgoing:
                    self._send_rows(step, first, boundary[0])
                rest = self._rest_range(boundary, (olo, ohi))
                if rest is not None:
                    rest_out = self._compute_chunk(layer, slab, slab_start, rest)
                    parts = (rest_out, first) if rest[0] < boundary[0] else (first, rest_out)
                    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
                else:
                    out = first
            own, own_start = out, olo
        return own, own_start

    @staticmethod
    def _boundary_range(outgoing: list[ExchangeStep], out_range) -> tuple[int, int] | None:
        if not outgoing:
            return None
        lo = min(s.row_start for s in outgoing)
        hi = max(s.row_end for s in outgoing)
        if not (out_range[0] <= lo and hi <= out_range[1]):
            raise SessionError(f"outgoing rows [{lo}, {hi}) outside owned {out_range}")
        return lo, hi

    @staticmethod
    def _rest_range(boundary, out_range) -> tuple[int, int] | None:
        olo, ohi = out_range
        blo, bhi = boundary
        if blo > olo and bhi < ohi:
            raise SessionError("boundary rows must touch one edge of the owned range")
        if blo > olo:
            return olo, blo
        if bhi < ohi:
            return bhi, ohi
        return None


def run_host(
    model: ModelSpec,
    weights,
    plan: PartitionPlan,
    x: Tensor,
    transports: dict[Role, object],
    timeout: float = DEFAULT_TIMEOUT_S,
    log: EventLog | None = None,
    check_plan: bool = True,
) -> np.ndarray:
    """Distribute the input, co-compute the overlap zones, merge, classify."""
    if check_plan:
        problems = validate_plan(plan, model)
        if problems:
            raise SessionError(f"plan does not fit model: {problems[0]}")
    if x.shape != model.input_shape:
        raise SessionError(f"input shape {x.shape} does not match model {model.input_shape}")
    node = _Node(Role.HOST, model, weights, plan, transports, timeout, log)

    # initial segments (exchange steps before layer 0) come straight from the input
    for step in node._outgoing(0):
        node._send_rows(step, x, 0)

    own, own_start = node.run_spatial(x)

    n = plan.n_spatial
    h_final = model.spatial_heights()[n]
    width = own.width
    merged = np.zeros((h_final, width, own.channels), dtype=np.float32)
    merged[own_start : own_start + own.height] = own.data
    for start, data in node._gather(n):
        merged[start : start + data.shape[0]] = data
    return _run_head(model, weights, Tensor(merged))


def run_secondary(
    role: Role,
    model: ModelSpec,
    weights,
    plan: PartitionPlan,
    transport,
    timeout: float = DEFAULT_TIMEOUT_S,
    log: EventLog | None = None,
) -> None:
    """Compute one segment, always serving host-needed boundary rows first."""
    if role not in (Role.ED1, Role.ED2):
        raise ValueError(f"secondary role must be ED1 or ED2, got {role}")
    node = _Node(role, model, weights, plan, {Role.HOST: transport}, timeout, log)
    node.run_spatial(None)


def run_local_session(
    model: ModelSpec,
    weights,
    plan: PartitionPlan,
    x: Tensor,
    rate_mbps: float | None = None,
    timeout: float = DEFAULT_TIMEOUT_S,
) -> tuple[np.ndarray, dict[Role, EventLog]]:
    """Host and both secondaries on in-process transports (threads)."""
    host_ed1, ed1_end = inproc_pair(rate_mbps)
    host_ed2, ed2_end = inproc_pair(rate_mbps)
    logs = {role: EventLog(role.value) for role in Role}
    failures: list[BaseException] = []

    def _worker(role, transport):
        try:
            run_secondary(role, model, weights, plan, transport, timeout, logs[role])
        except BaseException as exc:  # surfaced after join
            failures.append(exc)

    threads = [
        threading.Thread(target=_worker, args=(Role.ED1, ed1_end), daemon=True),
        threading.Thread(target=_worker, args=(Role.ED2, ed2_end), daemon=True),
    ]
    for t in threads:
        t.start()
    try:
        out = run_host(
            model, weights, plan, x,
            {Role.ED1: host_ed1, Role.ED2: host_ed2},
            timeout, logs[Role.HOST],
        )
    finally:
        for t in threads:
            t.join(timeout=timeout)
    if failures:
        raise failures[0]
    return out, logs


# --- socket deployment ------------------------------------------------------


def _session_doc(config: dict, plan: PartitionPlan) -> dict:
    return {
        "model": config["model"],
        "alpha": config.get("alpha", 1.0),
        "rho": config.get("rho", 224),
        "base_width": config.get("base_width", 0),
        "classes": config.get("classes", 1000),
        "seed": config.get("seed", 0),
        "plan": json.loads(plan_to_json(plan)),
    }


def load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _resolve(config: dict) -> tuple[ModelSpec, list, PartitionPlan]:
    model = get_model(
        config["model"],
        alpha=config.get("alpha", 1.0),
        rho=config.get("rho", 224),
        base_width=config.get("base_width", 0),
        classes=config.get("classes", 1000),
    )
    weights = make_weights(model, config.get("seed", 0))
    if config.get("plan_path"):
        with open(config["plan_path"]) as fh:
            plan = plan_from_json(fh.read())
    else:
        plan = build_plan(model, config.get("z1", 4))
    return model, weights, plan


def host_session(config: dict) -> tuple[np.ndarray, EventLog]:
    """Connect to both secondaries, handshake, run one distributed inference."""
    from .transport import connect

    model, weights, plan = _resolve(config)
    timeout = config.get("timeout_s", DEFAULT_TIMEOUT_S)
    transports = {}
    for role, key in ((Role.ED1, "ed1"), (Role.ED2, "ed2")):
        try:
            transports[role] = connect(config[key], timeout)
        except OSError as exc:
            raise SessionError(f"cannot reach {key} at {config[key]}: {exc}") from exc
    doc = _session_doc(config, plan)
    for t in transports.values():
        t.send(handshake_frame(doc))
    x = make_input(model, config.get("seed", 0))
    log = EventLog(Role.HOST.value)
    try:
        out = run_host(model, weights, plan, x, transports, timeout, log)
    finally:
        for t in transports.values():
            t.close()
    return out, log


def secondary_session(config: dict) -> EventLog:
    """Listen for the host, take the session parameters from its handshake."""
    from .transport import listen_one

    role = Role(config["role"])
    timeout = config.get("timeout_s", DEFAULT_TIMEOUT_S)
    transport = listen_one(config["listen"], timeout)
    try:
        doc = parse_handshake(transport.receive(timeout=timeout))
        model = get_model(
            doc["model"],
            alpha=doc["alpha"],
            rho=doc["rho"],
            base_width=doc["base_width"],
            classes=doc["classes"],
        )
        weights = make_weights(model, doc["seed"])
        plan = plan_from_json(json.dumps(doc["plan"]))
        log = EventLog(role.value)
        run_secondary(role, model, weights, plan, transport, timeout, log)
        return log
    finally:
        transport.close()


def verify_equivalence(
    model: ModelSpec, seed: int = 0, z1: int = 4, rate_mbps: float | None = None
) -> tuple[float, np.ndarray]:
    """Distributed vs monolithic on the same weights; returns (max rel err, output)."""
    weights = make_weights(model, seed)
    x = make_input(model, seed + 1)
    plan = build_plan(model, z1)
    reference = monolithic_infer(model, weights, x)
    distributed, _ = run_local_session(model, weights, plan, x, rate_mbps)
    scale = np.maximum(np.abs(reference.astype(np.float64)), 1e-12)
    err = float(np.max(np.abs(distributed.astype(np.float64) - reference) / scale))
    return err, distributed
