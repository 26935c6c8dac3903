"""Decode CPPN genomes into voxel body-plans with organs.

Coordinates are in centimetres in the body frame, origin at the centre of
the 23 cm build cube, z up.  The root skeleton lives on a regular voxel
grid inside that cube; each joint carries a 4 cm cuboid sub-segment whose
free faces are queried for further organs.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .cppn_neat import CppnGenome, query_batch

BODY_SIZE_CM = 23.0
HALF_SIZE_CM = BODY_SIZE_CM / 2
DEFAULT_RESOLUTION = 11
THRESHOLD = 0.5
MAX_HEAD_ORGANS = 8
MAX_ACTIVE_ORGANS = 16
CUBOID_SIDE_CM = 4.0
JOINT_LENGTH_CM = 5.0
ORGAN_CLEARANCE_CM = 4.0

# Number of distinct (sensors, wheels, joints) tuples allowed by the caps:
# at most 8 active organs on the head segment plus one daisy-chained organ
# per head joint.  Checked by enumeration in the tests.
REACHABLE_TYPE_COUNT = 525


class OrganKind(str, enum.Enum):
    WHEEL = "wheel"
    SENSOR = "sensor"
    JOINT = "joint"
    CASTER = "caster"

    @property
    def active(self) -> bool:
        return self is not OrganKind.CASTER


# CPPN output column for the skeleton and each organ kind
SKELETON_OUTPUT = 0
ORGAN_OUTPUTS = {OrganKind.WHEEL: 1, OrganKind.SENSOR: 2, OrganKind.JOINT: 3, OrganKind.CASTER: 4}


class DegenerateBodyError(ValueError):
    """The genome produced no skeleton."""


class RobotType(NamedTuple):
    num_sensors: int
    num_wheels: int
    num_joints: int


@dataclass(frozen=True)
class Organ:
    kind: OrganKind
    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    segment_id: int = 0
    strength: float = 1.0
    voxel: tuple[int, int, int] | None = None

    def priority_key(self):
        return (-self.strength, self.segment_id, self.position)


@dataclass(frozen=True)
class Segment:
    """Either the root voxel skeleton or a joint-mounted cuboid."""

    id: int
    occupancy: np.ndarray | None = field(default=None, compare=False)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    side: float = BODY_SIZE_CM
    parent_joint: Organ | None = None

    @property
    def is_root(self) -> bool:
        return self.parent_joint is None


@dataclass
class BodyPlan:
    segments: list[Segment]
    organs: list[Organ]
    resolution: int = DEFAULT_RESOLUTION
    type: RobotType | None = None

    @property
    def root(self) -> Segment:
        return self.segments[0]

    @property
    def voxel_size(self) -> float:
        return BODY_SIZE_CM / self.resolution

    def voxel_centers(self) -> np.ndarray:
        """Centres (cm) of occupied root voxels, shape (n, 3)."""
        idx = np.argwhere(self.root.occupancy)
        return (idx + 0.5) * self.voxel_size - HALF_SIZE_CM

    def organs_of(self, kind: OrganKind) -> list[Organ]:
        return [o for o in self.organs if o.kind is kind]

    def check_invariants(self) -> None:
        if not self.root.occupancy.any():
            raise DegenerateBodyError("root segment has no skeleton voxel")
        active = [o for o in self.organs if o.kind.active]
        head = [o for o in active if o.segment_id == 0]
        if len(head) > MAX_HEAD_ORGANS:
            raise ValueError(f"{len(head)} active organs on the head segment")
        if len(active) > MAX_ACTIVE_ORGANS:
            raise ValueError(f"{len(active)} active organs in total")
        extent = np.ptp(self.voxel_centers(), axis=0) + self.voxel_size
        if np.any(extent > BODY_SIZE_CM + 1e-9):
            raise ValueError(f"root skeleton exceeds {BODY_SIZE_CM} cm: {extent}")
        if self.type is not None and self.type != robot_type(self):
            raise ValueError("stored robot type does not match organ list")


# ---------------------------------------------------------------------------
# decoding

_FACE_DIRS = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
_NEIGHBOURS = np.array([d for d in itertools.product((-1, 0, 1), repeat=3) if any(d)])


def grid_inputs(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Voxel indices (n, 3) and matching CPPN inputs (n, 4) for the root grid."""
    idx = np.array(list(itertools.product(range(resolution), repeat=3)))
    xyz = (idx + 0.5) / resolution * 2.0 - 1.0
    d = np.linalg.norm(xyz, axis=1) / math.sqrt(3.0)
    return idx, np.column_stack([xyz, d])


def _cppn_inputs(points_cm: np.ndarray) -> np.ndarray:
    xyz = np.clip(points_cm / HALF_SIZE_CM, -1.0, 1.0)
    d = np.minimum(np.linalg.norm(points_cm / HALF_SIZE_CM, axis=1) / math.sqrt(3.0), 1.0)
    return np.column_stack([xyz, d])


def _shifted_empty(occupancy: np.ndarray, d) -> np.ndarray:
    """Mask of voxels whose neighbour at offset ``d`` is empty or off-grid."""
    padded = np.pad(occupancy, 1)
    n = occupancy.shape
    sl = tuple(slice(1 + di, 1 + di + ni) for di, ni in zip(d, n))
    return ~padded[sl]


def surface_mask(occupancy: np.ndarray) -> np.ndarray:
    exposed = np.zeros_like(occupancy)
    for d in _FACE_DIRS:
        exposed |= _shifted_empty(occupancy, d)
    return occupancy & exposed


def surface_normals(occupancy: np.ndarray) -> dict[tuple[int, int, int], np.ndarray]:
    """Outward unit normal for every exposed skeleton voxel.

    The normal points towards the empty part of the 26-neighbourhood, which
    gives tilted normals on edges and corners of the skeleton.
    """
    field_ = np.zeros(occupancy.shape + (3,))
    for d in _NEIGHBOURS:
        field_ += _shifted_empty(occupancy, d)[..., None] * d
    faces = np.zeros(occupancy.shape + (3,))
    for d in _FACE_DIRS:
        faces += _shifted_empty(occupancy, d)[..., None] * d
    normals = {}
    for v in map(tuple, np.argwhere(surface_mask(occupancy))):
        n = field_[v]
        if np.linalg.norm(n) < 1e-9:
            n = faces[v]
        if np.linalg.norm(n) < 1e-9:
            n = next(d for d in _FACE_DIRS if _shifted_empty(occupancy, d)[v]).astype(float)
        normals[v] = n / np.linalg.norm(n)
    return normals


def _largest_component(skeleton: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(skeleton)
    if count <= 1:
        return skeleton
    sizes = ndimage.sum(skeleton, labels, index=range(1, count + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def _organs_at(outputs: np.ndarray, position, normal, segment_id: int, voxel=None) -> list[Organ]:
    found = []
    for kind, col in ORGAN_OUTPUTS.items():
        if outputs[col] > THRESHOLD:
            found.append(Organ(kind, tuple(map(float, position)), tuple(map(float, normal)),
                               segment_id, float(outputs[col]), voxel))
    return found


def cuboid_for_joint(joint: Organ) -> tuple[np.ndarray, np.ndarray]:
    """Centre of the joint's cuboid and the face direction it is attached by."""
    n = np.asarray(joint.normal)
    center = np.asarray(joint.position) + n * (JOINT_LENGTH_CM + CUBOID_SIDE_CM / 2)
    attach = _FACE_DIRS[int(np.argmin(_FACE_DIRS @ n))]
    return center, attach


def decode(genome: CppnGenome, grid_resolution: int = DEFAULT_RESOLUTION) -> BodyPlan:
    if grid_resolution < 3:
        raise ValueError("grid_resolution must be at least 3")
    idx, inputs = grid_inputs(grid_resolution)
    out = query_batch(genome, inputs)
    skeleton = np.zeros((grid_resolution,) * 3, dtype=bool)
    skeleton[tuple(idx.T)] = out[:, SKELETON_OUTPUT] > THRESHOLD
    if not skeleton.any():
        raise DegenerateBodyError("CPPN expresses no skeleton voxel")
    skeleton = _largest_component(skeleton)

    voxel = BODY_SIZE_CM / grid_resolution
    flat = {tuple(v): k for k, v in enumerate(idx)}
    organs: list[Organ] = []
    for v, n in surface_normals(skeleton).items():
        center = (np.array(v) + 0.5) * voxel - HALF_SIZE_CM
        organs += _organs_at(out[flat[v]], center + n * voxel / 2, n, 0, v)

    segments = [Segment(0, skeleton)]
    joints = [o for o in organs if o.kind is OrganKind.JOINT]
    faces, owners = [], []
    for joint in joints:
        center, attach = cuboid_for_joint(joint)
        seg = Segment(len(segments), None, tuple(map(float, center)), CUBOID_SIDE_CM, joint)
        segments.append(seg)
        for d in _FACE_DIRS:
            if not np.array_equal(d, attach):
                faces.append((center + d * CUBOID_SIDE_CM / 2, d))
                owners.append(seg.id)
    if faces:
        face_out = query_batch(genome, _cppn_inputs(np.array([f[0] for f in faces])))
        for (pos, d), seg_id, o in zip(faces, owners, face_out):
            organs += _organs_at(o, pos, d, seg_id)

    organs.sort(key=lambda o: (o.segment_id, o.position, o.kind.value))
    plan = BodyPlan(segments, organs, grid_resolution)
    plan.type = robot_type(plan)
    return plan


# ---------------------------------------------------------------------------
# manufacturability


def _on_surface(organ: Organ, surface: np.ndarray, segments: dict[int, Segment]) -> bool:
    seg = segments.get(organ.segment_id)
    if seg is None:
        return False
    if seg.is_root:
        v = organ.voxel
        return v is not None and all(0 <= c < s for c, s in zip(v, surface.shape)) and bool(surface[v])
    offset = [abs(p - c) / (seg.side / 2) for p, c in zip(organ.position, seg.center)]
    on_face = sum(1 for x in offset if abs(x - 1.0) < 1e-9)
    return on_face == 1 and all(x <= 1 + 1e-9 for x in offset)


def _cuboid_hits_skeleton(plan: BodyPlan, seg: Segment) -> bool:
    centers = plan.voxel_centers()
    reach = (seg.side + plan.voxel_size) / 2
    return bool(np.any(np.all(np.abs(centers - np.asarray(seg.center)) < reach - 1e-9, axis=1)))


def manufacturability_filter(plan: BodyPlan) -> BodyPlan:
    """Drop organs failing any test; the result always satisfies the caps.

    Organs are considered strongest CPPN output first (ties broken by segment
    and coordinate).  Tests: surface attachment, wheel ground clearance,
    clearance between organs, joint cuboid not intersecting the skeleton,
    at most 8 active organs on the head, at most one chained active organ per
    joint sub-segment.
    """
    segments = {s.id: s for s in plan.segments}
    surface = surface_mask(plan.root.occupancy)
    candidates = sorted(plan.organs, key=Organ.priority_key)
    segment_of_joint = {id(s.parent_joint): s for s in plan.segments[1:]}

    def passes(o: Organ) -> bool:
        if o.kind is OrganKind.WHEEL and not o.normal[2] < 0:
            return False
        return _on_surface(o, surface, segments) and clear(o)

    kept: list[Organ] = []
    kept_pos = np.empty((len(candidates), 3))
    head_active = 0
    chained: dict[int, int] = {}

    def clear(o: Organ) -> bool:
        if not kept:
            return True
        gaps = np.linalg.norm(kept_pos[: len(kept)] - np.asarray(o.position), axis=1)
        return bool(np.all(gaps >= ORGAN_CLEARANCE_CM))

    def keep(o: Organ) -> None:
        kept_pos[len(kept)] = o.position
        kept.append(o)

    for o in (c for c in candidates if c.segment_id == 0):
        if o.kind.active and head_active >= MAX_HEAD_ORGANS:
            continue
        if not passes(o):
            continue
        if o.kind.active:
            if o.kind is OrganKind.JOINT:
                seg = segment_of_joint.get(id(o))
                if seg is not None and _cuboid_hits_skeleton(plan, seg):
                    continue
            head_active += 1
        keep(o)

    kept_ids = {id(o) for o in kept}
    live = {0} | {s.id for s in plan.segments[1:] if id(s.parent_joint) in kept_ids}
    for o in (c for c in candidates if c.segment_id != 0 and c.segment_id in live):
        if o.kind.active and chained.get(o.segment_id, 0) >= 1:
            continue
        if not passes(o):
            continue
        if o.kind.active:
            chained[o.segment_id] = chained.get(o.segment_id, 0) + 1
        keep(o)

    kept.sort(key=lambda o: (o.segment_id, o.position, o.kind.value))
    new = BodyPlan([s for s in plan.segments if s.id in live], kept, plan.resolution)
    new.type = robot_type(new)
    return new


def robot_type(plan: BodyPlan) -> RobotType:
    counts = {k: 0 for k in OrganKind}
    for o in plan.organs:
        counts[o.kind] += 1
    return RobotType(counts[OrganKind.SENSOR], counts[OrganKind.WHEEL], counts[OrganKind.JOINT])


def build_body(genome: CppnGenome, grid_resolution: int = DEFAULT_RESOLUTION) -> BodyPlan:
    """decode followed by the manufacturability filter."""
    return manufacturability_filter(decode(genome, grid_resolution))


# ---------------------------------------------------------------------------
# export


def plan_to_text(plan: BodyPlan) -> str:
    t = plan.type or robot_type(plan)
    lines = [f"bodyplan resolution {plan.resolution} voxel_cm {plan.voxel_size!r}",
             f"type sensors {t.num_sensors} wheels {t.num_wheels} joints {t.num_joints}"]
    for s in plan.segments:
        if s.is_root:
            vox = np.argwhere(s.occupancy)
            lines.append(f"segment {s.id} root voxels {len(vox)}")
            lines += [f"  voxel {i} {j} {k}" for i, j, k in vox]
        else:
            c = " ".join(f"{x:.4f}" for x in s.center)
            lines.append(f"segment {s.id} cuboid side {s.side:g} center {c}")
    lines.append("organs kind segment x y z nx ny nz strength")
    for o in plan.organs:
        vals = " ".join(f"{v:.4f}" for v in (*o.position, *o.normal, o.strength))
        lines.append(f"  {o.kind.value} {o.segment_id} {vals}")
    return "\n".join(lines) + "\n"


ORGAN_COLOURS = {OrganKind.WHEEL: "#1f77b4", OrganKind.SENSOR: "#d62728",
                 OrganKind.JOINT: "#2ca02c", OrganKind.CASTER: "#7f7f7f"}


def plan_to_svg(plan: BodyPlan, path) -> None:
    """Top-down projection: skeleton columns, cuboids, organs with normals."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Rectangle

    plt.rcParams["svg.hashsalt"] = "melai"
    fig, ax = plt.subplots(figsize=(4, 4))
    vs = plan.voxel_size
    for x, y in {tuple(c[:2]) for c in plan.voxel_centers()}:
        ax.add_patch(Rectangle((x - vs / 2, y - vs / 2), vs, vs, color="#dddddd", ec="#999999", lw=0.3))
    for s in plan.segments[1:]:
        ax.add_patch(Rectangle((s.center[0] - s.side / 2, s.center[1] - s.side / 2), s.side, s.side,
                               fill=False, ec="#2ca02c", lw=1))
    for o in plan.organs:
        x, y, _ = o.position
        ax.plot(x, y, "o", color=ORGAN_COLOURS[o.kind], ms=5)
        ax.plot([x, x + 2 * o.normal[0]], [y, y + 2 * o.normal[1]], color=ORGAN_COLOURS[o.kind], lw=1)
    lim = HALF_SIZE_CM + JOINT_LENGTH_CM + CUBOID_SIDE_CM + 2
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    t = plan.type or robot_type(plan)
    ax.set_title(f"sensors {t.num_sensors}  wheels {t.num_wheels}  joints {t.num_joints}")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
