"""Row-partition planning for three-node distributed inference.

Ownership model: at every spatial layer the output rows split into three
contiguous ranges — ED1 [0, a), host [a, b), ED2 [b, H). The planner only
decides ownership; every exchange (including the initial input segments and
the final merge) is then *derived* from receptive-field math: whatever input
rows a device needs but does not own must come from the device that owns
them. The validator re-checks the same condition on any plan.

VGG-16: the host band stays (z-2) rows wide through a block's convolutions
(z input rows), and a max-pool maps ownership [a, b) to
[floor(a/2), ceil(b/2)) — the host absorbs straddling pool rows, which is
what keeps the overlap-zone recurrence z' = z/2 + 2 going across blocks.

MobileNet-V1: the host band is 2 rows after every stride-2 layer, grows to
4 at the next stride-1 depthwise layer (alignment chosen so the following
stride-2 zone starts on an even input row, taking the extra row from the
ED1 side), and a stride-2 depthwise layer consumes a 5-row input zone: the
host's 4 owned rows plus one row sent by ED1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .layers import LayerKind, LayerSpec
from .models import ModelSpec


class Role(Enum):
    HOST = "host"
    ED1 = "ed1"
    ED2 = "ed2"


ROLES = (Role.HOST, Role.ED1, Role.ED2)
SECONDARIES = (Role.ED1, Role.ED2)

Range = tuple[int, int]


class PlanError(ValueError):
    """Raised when a partition request is geometrically infeasible."""


def receptive_field(spec: LayerSpec, out_rows: Range, in_height: int) -> Range:
    """Exact input rows [lo, hi) needed for output rows [a, b) of one layer."""
    a, b = out_rows
    if not 0 <= a < b:
        raise ValueError(f"empty or invalid output range [{a}, {b})")
    kh = spec.kernel[0]
    s, p = spec.stride, spec.padding
    if spec.kind is LayerKind.MAX_POOL:
        kh, s, p = 2, 2, 0
    return max(0, a * s - p), min(in_height, (b - 1) * s - p + kh)


def overlap_recurrence(z_prev: int) -> int:
    """Host overlap-zone rows across a pooling step: z = z_prev/2 + 2."""
    if z_prev < 2 or z_prev % 2:
        raise ValueError(f"overlap zone must be even and >= 2, got {z_prev}")
    return z_prev // 2 + 2


@dataclass(frozen=True)
class ExchangeStep:
    """One boundary-row transfer, in the coordinates of the input map of
    `before_layer` (== output of the previous layer). `before_layer` equal to
    the number of spatial layers means the final merge at the host."""

    before_layer: int
    sender: Role
    receiver: Role
    row_start: int
    row_end: int
    width: int
    channels: int

    def __post_init__(self):
        if self.row_end <= self.row_start:
            raise ValueError("exchange step must carry at least one row")

    @property
    def rows(self) -> int:
        return self.row_end - self.row_start

    @property
    def bits(self) -> int:
        return self.rows * self.width * self.channels * 32


@dataclass(frozen=True)
class LayerPartition:
    """Per-layer row assignment. `out_ranges` are the owned (computed) output
    rows per role — disjoint, covering the full output height. `in_ranges`
    are their receptive fields. `host_rows` is the table-reported host figure
    (VGG: input-zone size; MobileNet: 5 for stride-2, 4 for stride-1 3x3)."""

    index: int
    in_height: int
    out_height: int
    out_ranges: dict[Role, Range]
    in_ranges: dict[Role, Range]
    host_rows: int


@dataclass(frozen=True)
class PartitionPlan:
    model_name: str
    z1: int  # VGG entry overlap rows; 0 for MobileNet plans
    parts: tuple[LayerPartition, ...]
    exchange_schedule: tuple[ExchangeStep, ...]

    def steps_before(self, layer: int) -> list[ExchangeStep]:
        return [s for s in self.exchange_schedule if s.before_layer == layer]

    @property
    def n_spatial(self) -> int:
        return len(self.parts)


def _subtract(need: Range, have: Range | None) -> list[Range]:
    """Row ranges in `need` but not in `have`."""
    nlo, nhi = need
    if have is None:
        return [(nlo, nhi)] if nhi > nlo else []
    hlo, hhi = have
    out = []
    if nlo < min(hlo, nhi):
        out.append((nlo, min(hlo, nhi)))
    if max(hhi, nlo) < nhi:
        out.append((max(hhi, nlo), nhi))
    return out


def _intersect(x: Range, y: Range) -> Range | None:
    lo, hi = max(x[0], y[0]), min(x[1], y[1])
    return (lo, hi) if hi > lo else None


def _spatial_geometry(model: ModelSpec):
    specs = model.layers[: model.n_spatial]
    heights = model.spatial_heights()
    w = model.input_shape[1]
    widths = [w]
    for spec in specs:
        w = spec.out_width(w)
        widths.append(w)
    return specs, heights, widths


def _derive_schedule(
    model: ModelSpec, out_ranges: list[dict[Role, Range]]
) -> list[ExchangeStep]:
    """All transfers implied by ownership + receptive fields, in canonical order."""
    specs, heights, widths = _spatial_geometry(model)
    n = len(specs)
    steps: list[ExchangeStep] = []
    for layer in range(n + 1):
        if layer == 0:
            prev: dict[Role, Range | None] = {
                Role.HOST: (0, heights[0]),
                Role.ED1: None,
                Role.ED2: None,
            }
        else:
            prev = dict(out_ranges[layer - 1])
        if layer < n:
            needs = {
                dev: receptive_field(specs[layer], out_ranges[layer][dev], heights[layer])
                for dev in ROLES
            }
        else:
            needs = {Role.HOST: (0, heights[n])}  # merge: host wants the full map
        for dev, need in needs.items():
            for missing in _subtract(need, prev.get(dev)):
                for owner in ROLES:
                    if owner is dev or prev.get(owner) is None:
                        continue
                    part = _intersect(missing, prev[owner])
                    if part is not None:
                        steps.append(
                            ExchangeStep(
                                before_layer=layer,
                                sender=owner,
                                receiver=dev,
                                row_start=part[0],
                                row_end=part[1],
                                width=widths[layer],
                                channels=specs[layer].in_channels
                                if layer < n
                                else specs[n - 1].out_channels,
                            )
                        )
    order = {Role.ED1: 0, Role.ED2: 1, Role.HOST: 2}
    steps.sort(key=lambda s: (s.before_layer, order[s.sender], order[s.receiver], s.row_start))
    return steps


def _make_plan(model: ModelSpec, z1: int, bands: list[Range], host_rows: list[int]) -> PartitionPlan:
    specs, heights, widths = _spatial_geometry(model)
    out_ranges: list[dict[Role, Range]] = []
    parts: list[LayerPartition] = []
    for i, spec in enumerate(specs):
        a, b = bands[i]
        h_out = spec.out_height(heights[i])
        if not (0 < a < b < h_out):
            raise PlanError(
                f"layer {i}: host band [{a}, {b}) leaves no rows for a secondary "
                f"(output height {h_out})"
            )
        ranges = {Role.ED1: (0, a), Role.HOST: (a, b), Role.ED2: (b, h_out)}
        out_ranges.append(ranges)
        parts.append(
            LayerPartition(
                index=i,
                in_height=heights[i],
                out_height=h_out,
                out_ranges=ranges,
                in_ranges={
                    dev: receptive_field(spec, rng, heights[i])
                    for dev, rng in ranges.items()
                },
                host_rows=host_rows[i],
            )
        )
    schedule = _derive_schedule(model, out_ranges)
    return PartitionPlan(model.name, z1, tuple(parts), tuple(schedule))


def _vgg_blocks(model: ModelSpec) -> list[list[int]]:
    """Spatial layer indices grouped into pool-terminated blocks."""
    blocks, cur = [], []
    for i, spec in enumerate(model.layers[: model.n_spatial]):
        cur.append(i)
        if spec.kind is LayerKind.MAX_POOL:
            blocks.append(cur)
            cur = []
    if cur:
        blocks.append(cur)
    return blocks


def build_plan_vgg(model: ModelSpec, z1: int = 4) -> PartitionPlan:
    """Block-coupled VGG partition from the entry overlap-zone size z1.

    Every block's zone follows the recurrence; feasibility needs the whole
    chain even, including the virtual zone after the last pool (otherwise
    some device would have to pool an odd tile).
    """
    if z1 % 2 or not 4 <= z1 <= 112:
        raise PlanError(f"z1 must be even and within [4, 112], got {z1}")
    blocks = _vgg_blocks(model)
    specs, heights, _ = _spatial_geometry(model)

    z_chain = [z1]
    for _ in blocks:
        z_chain.append(overlap_recurrence(z_chain[-1]) if z_chain[-1] % 2 == 0 else -1)
        if z_chain[-1] % 2:
            raise PlanError(
                f"overlap zone after block {len(z_chain) - 1} would be "
                f"{z_chain[-1]} rows; an odd zone violates the rule of pooling"
            )

    bands: list[Range] = [(0, 0)] * len(specs)
    host_rows = [0] * len(specs)
    for bi, block in enumerate(blocks):
        z = z_chain[bi]
        h = heights[block[0]]
        c = h // 2
        a, b = c - (z - 2) // 2, c + (z - 2) // 2
        if a < 1 or b > h - 1:
            raise PlanError(f"z={z} at block {bi + 1} leaves no rows for a secondary")
        for li in block:
            if specs[li].kind is LayerKind.MAX_POOL:
                bands[li] = (a // 2, (b + 1) // 2)
            else:
                bands[li] = (a, b)
            host_rows[li] = z
    return _make_plan(model, z1, bands, host_rows)


def build_plan_mobilenet(model: ModelSpec) -> PartitionPlan:
    """MobileNet-V1 partition: 5-row host zones at stride-2 depthwise layers,
    4-row zones at stride-1, single ED1-to-host row before each stride-2."""
    specs, heights, _ = _spatial_geometry(model)
    if not specs or specs[0].stride != 2:
        raise PlanError("expected a stride-2 stem convolution")

    bands: list[Range] = []
    host_rows: list[int] = []
    m = heights[0] // 2  # image half boundary
    a, b = m // 2 - 1, m // 2 + 1  # stem band: 2 rows, 5-row zone leaning to ED1
    bands.append((a, b))
    host_rows.append(5)
    for i, spec in enumerate(specs[1:], start=1):
        h_in = heights[i]
        if spec.kind is LayerKind.POINTWISE_CONV:
            host_rows.append(4)
        elif spec.kind is LayerKind.DEPTHWISE_CONV and spec.stride == 1:
            if b - a == 2:
                downstream_s2 = any(
                    s.kind is LayerKind.DEPTHWISE_CONV and s.stride == 2
                    for s in specs[i + 1 :]
                )
                if downstream_s2:
                    na = a - 1 if a % 2 else a - 2  # even start for the next stride-2 zone
                else:
                    na = a - 1
                if na >= 1 and na + 4 <= h_in - 1:
                    a, b = na, na + 4
                elif downstream_s2:
                    raise PlanError(f"cannot widen host band before layer {i}")
            host_rows.append(4)
        elif spec.kind is LayerKind.DEPTHWISE_CONV and spec.stride == 2:
            if b - a != 4 or a % 2:
                raise PlanError(
                    f"stride-2 layer {i} needs a 4-row host band starting on an even row, "
                    f"got [{a}, {b})"
                )
            a, b = a // 2, a // 2 + 2
            host_rows.append(5)
        else:
            raise PlanError(f"unexpected spatial layer kind {spec.kind} at {i}")
        bands.append((a, b))
    return _make_plan(model, 0, bands, host_rows)


def build_plan(model: ModelSpec, z1: int = 4) -> PartitionPlan:
    if model.name == "vgg16":
        return build_plan_vgg(model, z1)
    return build_plan_mobilenet(model)


def validate_plan(plan: PartitionPlan, model: ModelSpec) -> list[str]:
    """Empty list iff output coverage is exact and every device's receptive
    field is covered by its own rows plus the rows the schedule delivers."""
    specs, heights, _ = _spatial_geometry(model)
    violations: list[str] = []
    if len(plan.parts) != len(specs):
        return [f"plan has {len(plan.parts)} layers, model has {len(specs)} spatial layers"]

    for part in plan.parts:
        spec = specs[part.index]
        h_out = spec.out_height(heights[part.index])
        ranges = [part.out_ranges[dev] for dev in (Role.ED1, Role.HOST, Role.ED2)]
        covered = 0
        prev_hi = 0
        ok = True
        for lo, hi in ranges:
            if lo != prev_hi or hi < lo:
                ok = False
            covered += max(0, hi - lo)
            prev_hi = hi
        if not ok or prev_hi != h_out or covered != h_out:
            violations.append(
                f"layer {part.index}: output rows {ranges} do not tile [0, {h_out})"
            )

    n = len(specs)
    for layer in range(n + 1):
        prev: dict[Role, Range | None]
        if layer == 0:
            prev = {Role.HOST: (0, heights[0]), Role.ED1: None, Role.ED2: None}
        else:
            prev = dict(plan.parts[layer - 1].out_ranges)
        incoming: dict[Role, list[Range]] = {dev: [] for dev in ROLES}
        for step in plan.steps_before(layer):
            sender_owned = prev.get(step.sender)
            if sender_owned is None or not (
                sender_owned[0] <= step.row_start and step.row_end <= sender_owned[1]
            ):
                violations.append(
                    f"step before layer {layer}: {step.sender.value} does not own "
                    f"rows [{step.row_start}, {step.row_end})"
                )
            incoming[step.receiver].append((step.row_start, step.row_end))
        if layer < n:
            needs = {
                dev: receptive_field(specs[layer], plan.parts[layer].out_ranges[dev], heights[layer])
                for dev in ROLES
            }
        else:
            needs = {Role.HOST: (0, heights[n])}
        for dev, need in needs.items():
            missing = _subtract(need, prev.get(dev))
            for gap in missing:
                rest = [gap]
                for got in incoming[dev]:
                    rest = [r for part_ in rest for r in _subtract(part_, got)]
                if rest:
                    where = "merge" if layer == n else f"layer {layer}"
                    violations.append(
                        f"{where}: {dev.value} receptive field misses rows {rest}"
                    )
    return violations


def optimize_plan(model: ModelSpec, timing, rate_mbps: float) -> PartitionPlan:
    """Exhaustive search over feasible entry zones z1, scored by simulated
    makespan; ties break toward the smaller zone. MobileNet partitions are
    fully determined by the stride pattern, so there is nothing to search."""
    from .simulate import simulate

    if model.name != "vgg16":
        return build_plan_mobilenet(model)
    best: tuple[float, int, PartitionPlan] | None = None
    for z1 in range(4, 113, 2):
        try:
            plan = build_plan_vgg(model, z1)
        except PlanError:
            continue
        makespan = simulate(plan, model, timing, rate_mbps).makespan
        if best is None or (makespan, z1) < (best[0], best[1]):
            best = (makespan, z1, plan)
    if best is None:
        raise PlanError("no feasible partition for this model")
    return best[2]


# --- serialization and table rendering -------------------------------------


def plan_to_json(plan: PartitionPlan) -> str:
    doc = {
        "model": plan.model_name,
        "z1": plan.z1,
        "layers": [
            {
                "layer": p.index,
                "in_height": p.in_height,
                "out_height": p.out_height,
                "host_rows": p.host_rows,
                "out_ranges": {dev.value: list(p.out_ranges[dev]) for dev in ROLES},
                "in_ranges": {dev.value: list(p.in_ranges[dev]) for dev in ROLES},
            }
            for p in plan.parts
        ],
        "exchange_schedule": [
            {
                "before_layer": s.before_layer,
                "sender": s.sender.value,
                "receiver": s.receiver.value,
                "rows": [s.row_start, s.row_end],
                "width": s.width,
                "channels": s.channels,
            }
            for s in plan.exchange_schedule
        ],
    }
    return json.dumps(doc, indent=2)


def plan_from_json(text: str) -> PartitionPlan:
    doc = json.loads(text)
    parts = tuple(
        LayerPartition(
            index=item["layer"],
            in_height=item["in_height"],
            out_height=item["out_height"],
            out_ranges={Role(k): tuple(v) for k, v in item["out_ranges"].items()},
            in_ranges={Role(k): tuple(v) for k, v in item["in_ranges"].items()},
            host_rows=item["host_rows"],
        )
        for item in doc["layers"]
    )
    schedule = tuple(
        ExchangeStep(
            before_layer=item["before_layer"],
            sender=Role(item["sender"]),
            receiver=Role(item["receiver"]),
            row_start=item["rows"][0],
            row_end=item["rows"][1],
            width=item["width"],
            channels=item["channels"],
        )
        for item in doc["exchange_schedule"]
    )
    return PartitionPlan(doc["model"], doc["z1"], parts, schedule)


def render_vgg_table(plan: PartitionPlan, model: ModelSpec) -> str:
    """Per-block input rows (host overlap zone, ED1 segment, ED2 segment)."""
    blocks = _vgg_blocks(model)
    lines = [f"{'Block':<8}{'Host':>6}{'ED1':>6}{'ED2':>6}"]
    for bi, block in enumerate(blocks, start=1):
        part = plan.parts[block[0]]
        ed1 = part.in_ranges[Role.ED1]
        ed2 = part.in_ranges[Role.ED2]
        lines.append(
            f"{f'Block{bi}':<8}{part.host_rows:>6}{ed1[1] - ed1[0]:>6}{ed2[1] - ed2[0]:>6}"
        )
    return "\n".join(lines) + "\n"


def render_mobilenet_table(plan: PartitionPlan, model: ModelSpec) -> str:
    """Stem plus depthwise layers: host rows and the segment stage height,
    with runs of identical stride-1 rows collapsed (the x5 group)."""
    specs, heights, _ = _spatial_geometry(model)
    rows: list[tuple[str, int, int]] = []
    for part in plan.parts:
        spec = specs[part.index]
        if spec.kind is LayerKind.CONV:
            label = f"Conv /s{spec.stride}"
        elif spec.kind is LayerKind.DEPTHWISE_CONV:
            label = f"Conv dw/s{spec.stride}"
        else:
            continue
        rows.append((label, part.host_rows, part.out_height))
    lines = [f"{'Layers':<16}{'Host':>6}{'ED1':>6}{'ED2':>6}"]
    i = 0
    while i < len(rows):
        j = i
        while j < len(rows) and rows[j] == rows[i]:
            j += 1
        label, host, h = rows[i]
        if j - i > 1:
            label = f"{label} x{j - i}"
        lines.append(f"{label:<16}{host:>6}{h:>6}{h:>6}")
        i = j
    return "\n".join(lines) + "\n"
