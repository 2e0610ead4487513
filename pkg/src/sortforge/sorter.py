"""Sorting-manipulation selection and a tick-based conveyor simulator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .imgcore import ImageError, as_mask, moments, read_mask, tight_box


class Action(str, Enum):
    PICK_AND_RELEASE = "pick_and_release"
    PUSH_AND_DROP = "push_and_drop"
    SKIP = "skip"


class Reason(str, Enum):
    PUSH_IMPOSSIBLE = "push_impossible"  # constraint 1 holds: pick path
    PUSH_FEASIBLE = "push_feasible"      # constraint 1 fails and push is in time
    PICK_TOO_LATE = "pick_too_late"      # constraint 2 fires
    PUSH_TOO_LATE = "push_too_late"      # constraint 3 fires
    FORCED_PICK = "forced_pick"          # pick-only baseline


class PolicyMode(str, Enum):
    LITERAL = "literal"
    PROSE = "prose"

    @classmethod
    def parse(cls, text: "str | PolicyMode") -> "PolicyMode":
        if isinstance(text, PolicyMode):
            return text
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown policy mode {text!r} (expected literal or prose)") from None


# Manipulation durations measured on the real system.
T_PUSH_AND_DROP = 3.3
T_PICK_AND_RELEASE = 5.2

# Success rates per category from ten trials each.
SUCCESS_RATES = {
    Action.PICK_AND_RELEASE: {"aluminum_can": 0.8, "glass_bottle": 0.7, "plastic_bottle": 0.6},
    Action.PUSH_AND_DROP: {"aluminum_can": 0.6, "glass_bottle": 0.5, "plastic_bottle": 0.5},
}
CATEGORIES = ("aluminum_can", "glass_bottle", "plastic_bottle")


@dataclass(frozen=True)
class SortingScene:
    s_x: float
    s_y: float
    l_bx: float
    l_by: float
    l_e: float
    t_pd: float = T_PUSH_AND_DROP
    t_pp: float = T_PICK_AND_RELEASE
    v_pd: float = 0.1
    v_c: float = 0.05

    def __post_init__(self) -> None:
        for name in ("s_x", "s_y", "l_bx", "l_by", "l_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("t_pd", "t_pp", "v_pd", "v_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ManipulationDecision:
    action: Action
    reason: Reason


def push_impossible(scene: SortingScene) -> bool:
    return (scene.s_x / 2) / scene.v_c > scene.l_by / scene.v_pd


def pick_too_late(scene: SortingScene, mode: PolicyMode) -> bool:
    window = scene.l_e / scene.v_c
    return scene.t_pp < window if mode is PolicyMode.LITERAL else scene.t_pp > window


def push_too_late(scene: SortingScene, mode: PolicyMode) -> bool:
    window = scene.l_bx / scene.v_c
    return scene.t_pd < window if mode is PolicyMode.LITERAL else scene.t_pd > window


def select_manipulation(scene: SortingScene, policy_mode: PolicyMode | str = PolicyMode.LITERAL) -> ManipulationDecision:
    """Push-and-drop when possible, else pick-and-release, else skip.

    LITERAL follows the pseudocode inequalities as printed; PROSE flips the
    two "too late" comparisons to match their described meaning.
    """
    mode = PolicyMode.parse(policy_mode)
    if push_impossible(scene):
        if pick_too_late(scene, mode):
            return ManipulationDecision(Action.SKIP, Reason.PICK_TOO_LATE)
        return ManipulationDecision(Action.PICK_AND_RELEASE, Reason.PUSH_IMPOSSIBLE)
    if push_too_late(scene, mode):
        return ManipulationDecision(Action.SKIP, Reason.PUSH_TOO_LATE)
    return ManipulationDecision(Action.PUSH_AND_DROP, Reason.PUSH_FEASIBLE)


# --- grasp / push geometry ---------------------------------------------------

@dataclass(frozen=True)
class GraspPlan:
    grasp_center: tuple[float, float]
    direction: tuple[float, float]
    fallback: bool = False


@dataclass(frozen=True)
class PushPlan:
    start: tuple[float, float]
    direction: tuple[float, float]


def virtual_com(silhouette: np.ndarray) -> tuple[float, float]:
    return moments(silhouette).centroid


def grasp_plan(silhouette: np.ndarray) -> GraspPlan:
    """Grasp line through the virtual CoM, perpendicular to the principal axis.

    Circular silhouettes have no principal axis; they get a vertical line and
    ``fallback=True``.
    """
    m = moments(silhouette)
    if m.isotropic:
        return GraspPlan(m.centroid, (0.0, 1.0), fallback=True)
    ax, ay = m.principal_axis
    dx, dy = -ay, ax
    if dx < 0 or (dx == 0 and dy < 0):
        dx, dy = -dx, -dy
    return GraspPlan(m.centroid, (float(dx) + 0.0, float(dy) + 0.0))


def push_plan(silhouette: np.ndarray, bin_front_center: tuple[float, float]) -> PushPlan:
    cx, cy = virtual_com(silhouette)
    vx = bin_front_center[0] - cx
    vy = bin_front_center[1] - cy
    norm = float(np.hypot(vx, vy))
    if norm == 0.0:
        raise ValueError("zero push vector")
    return PushPlan((cx, cy), (vx / norm, vy / norm))


# --- simulation --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConveyorItem:
    id: str
    category: str
    spawn_time: float
    silhouette: np.ndarray = field(repr=False)
    lateral: float = 0.0  # meters across the belt, signed, from the belt center line


@dataclass(frozen=True)
class ConveyorLayout:
    """Belt geometry: items enter at x = 0 and leave the image at ``view_length``.

    The bin center line sits at ``bin_x`` along the belt and ``bin_y``
    across it.
    """

    px_per_m: float = 1000.0
    view_length: float = 0.8
    bin_x: float = 0.5
    bin_y: float = 0.3
    t_pd: float = T_PUSH_AND_DROP
    t_pp: float = T_PICK_AND_RELEASE
    v_pd: float = 0.1
    v_c: float = 0.05

    def scene_for(self, item: ConveyorItem, x: float) -> SortingScene:
        box = tight_box(item.silhouette)
        if box is None:
            raise ImageError(f"item {item.id}: empty silhouette")
        return SortingScene(
            s_x=box.width / self.px_per_m,
            s_y=box.height / self.px_per_m,
            l_bx=max(self.bin_x - x, 0.0),
            l_by=abs(self.bin_y - item.lateral),
            l_e=max(self.view_length - x, 0.0),
            t_pd=self.t_pd,
            t_pp=self.t_pp,
            v_pd=self.v_pd,
            v_c=self.v_c,
        )


@dataclass
class SimulationReport:
    spawned: int = 0
    sorted_count: int = 0
    skipped_count: int = 0
    failed_count: int = 0
    action_counts: dict = field(default_factory=lambda: {a.value: 0 for a in Action})
    handling_times: dict = field(default_factory=lambda: {Action.PICK_AND_RELEASE.value: [],
                                                          Action.PUSH_AND_DROP.value: []})
    makespan: float = 0.0
    events: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    @property
    def executed(self) -> int:
        return sum(len(v) for v in self.handling_times.values())

    @property
    def mean_handling_time(self) -> float:
        times = [t for v in self.handling_times.values() for t in v]
        return float(np.mean(times)) if times else 0.0

    def mean_time(self, action: Action) -> float:
        times = self.handling_times[action.value]
        return float(np.mean(times)) if times else 0.0

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "spawned": self.spawned,
            "sorted_count": self.sorted_count,
            "skipped_count": self.skipped_count,
            "failed_count": self.failed_count,
            "action_counts": dict(self.action_counts),
            "executed": self.executed,
            "mean_handling_time": self.mean_handling_time,
            "mean_handling_time_by_action": {a: (float(np.mean(v)) if v else None)
                                             for a, v in self.handling_times.items()},
            "makespan": self.makespan,
            "events": list(self.events),
        }


def simulate(stream: list[ConveyorItem], layout: ConveyorLayout = ConveyorLayout(),
             policy_mode: PolicyMode | str = PolicyMode.LITERAL, tick: float = 0.05,
             seed: int = 0, *, force_pick: bool = False, stochastic: bool = False,
             record_trace: bool = False, max_time: float | None = None) -> SimulationReport:
    """Run the first-in-first-out sorting loop over a stream of conveyed items.

    The robot handles one item at a time. Whenever it is idle, the frontmost
    item still on the belt is evaluated; skipped items are ignored from then
    on and items leaving the view unhandled count as skips. With
    ``force_pick`` every feasible item is picked (the pick-only baseline).
    """
    if not tick > 0:
        raise ValueError("tick must be > 0")
    mode = PolicyMode.parse(policy_mode)
    spawns = [it.spawn_time for it in stream]
    if spawns != sorted(spawns):
        raise ValueError("stream must be sorted by spawn_time")
    rng = np.random.default_rng(seed)
    report = SimulationReport()
    if not stream:
        return report

    durations = {Action.PICK_AND_RELEASE: layout.t_pp, Action.PUSH_AND_DROP: layout.t_pd}
    transit = layout.view_length / layout.v_c
    if max_time is None:
        max_time = stream[-1].spawn_time + transit + layout.t_pp + layout.t_pd + 10 * tick

    order = {id(it): i for i, it in enumerate(stream)}
    next_spawn = 0
    on_belt: list[ConveyorItem] = []
    busy_until = -1.0
    current = None  # (item, action, start)
    n = 0
    while True:
        t = n * tick
        if t > max_time:
            break
        while next_spawn < len(stream) and stream[next_spawn].spawn_time <= t + 1e-12:
            on_belt.append(stream[next_spawn])
            next_spawn += 1
            report.spawned += 1

        if current is not None and t + 1e-12 >= busy_until:
            item, action, start = current
            ok = True
            if stochastic:
                ok = bool(rng.random() < SUCCESS_RATES[action].get(item.category, 1.0))
            if ok:
                report.sorted_count += 1
            else:
                report.failed_count += 1
                report.skipped_count += 1
            report.events.append({"time": round(busy_until, 9), "item": item.id,
                                  "event": "done" if ok else "failed", "action": action.value})
            current = None

        for item in list(on_belt):
            if layout.v_c * (t - item.spawn_time) > layout.view_length:
                on_belt.remove(item)
                report.skipped_count += 1
                report.events.append({"time": round(t, 9), "item": item.id, "event": "exited"})

        while current is None and on_belt:
            item = max(on_belt, key=lambda it: (layout.v_c * (t - it.spawn_time), -order[id(it)]))
            x = layout.v_c * (t - item.spawn_time)
            scene = layout.scene_for(item, x)
            if force_pick:
                decision = (ManipulationDecision(Action.SKIP, Reason.PICK_TOO_LATE)
                            if pick_too_late(scene, mode)
                            else ManipulationDecision(Action.PICK_AND_RELEASE, Reason.FORCED_PICK))
            else:
                decision = select_manipulation(scene, mode)
            on_belt.remove(item)
            report.action_counts[decision.action.value] += 1
            report.events.append({"time": round(t, 9), "item": item.id, "event": "decide",
                                  "action": decision.action.value, "reason": decision.reason.value})
            if decision.action is Action.SKIP:
                report.skipped_count += 1
                continue
            duration = durations[decision.action]
            busy_until = t + duration
            current = (item, decision.action, t)
            report.handling_times[decision.action.value].append(duration)
            report.makespan = max(report.makespan, busy_until)

        if record_trace:
            pending = len(on_belt) + (1 if current is not None else 0)
            report.trace.append((round(t, 9), report.spawned, report.sorted_count,
                                 report.skipped_count, pending))
        if next_spawn == len(stream) and not on_belt and current is None:
            break
        n += 1
    return report


# --- stream I/O --------------------------------------------------------------

def rect_silhouette(width_px: int, height_px: int, pad: int = 2) -> np.ndarray:
    mask = np.zeros((height_px + 2 * pad, width_px + 2 * pad), dtype=bool)
    mask[pad:pad + height_px, pad:pad + width_px] = True
    return mask


def load_stream(path: str | Path) -> list[ConveyorItem]:
    """Read a JSON-lines stream; each line carries either ``silhouette`` (PNG
    path, relative to the stream file) or ``rect`` ``[width_px, height_px]``."""
    path = Path(path)
    items = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        for key in ("id", "category", "spawn_time"):
            if key not in rec:
                raise ValueError(f"{path}:{lineno}: missing field {key!r}")
        if "silhouette" in rec:
            sil = read_mask(path.parent / rec["silhouette"])
        elif "rect" in rec:
            w, h = rec["rect"]
            sil = rect_silhouette(int(w), int(h))
        else:
            raise ValueError(f"{path}:{lineno}: need 'silhouette' or 'rect'")
        items.append(ConveyorItem(str(rec["id"]), rec["category"], float(rec["spawn_time"]),
                                  as_mask(sil), float(rec.get("lateral", 0.0))))
    items.sort(key=lambda it: it.spawn_time)
    return items


def generate_stream(n: int, seed: int = 0, spacing: float = 6.0,
                    layout: ConveyorLayout = ConveyorLayout()) -> list[ConveyorItem]:
    """Random stream of rectangles with fixed spawn spacing (seeded)."""
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        w = int(rng.integers(40, 260))
        h = int(rng.integers(40, 120))
        lateral = float(rng.uniform(-0.1, 0.25))
        cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
        items.append(ConveyorItem(f"item{i:03d}", cat, round(i * spacing, 6),
                                  rect_silhouette(w, h), lateral))
    return items


def stream_to_jsonl(items: list[ConveyorItem]) -> str:
    lines = []
    for it in items:
        box = tight_box(it.silhouette)
        lines.append(json.dumps({"id": it.id, "category": it.category, "spawn_time": it.spawn_time,
                                 "lateral": it.lateral, "rect": [box.width, box.height]},
                                sort_keys=True))
    return "\n".join(lines) + "\n"
