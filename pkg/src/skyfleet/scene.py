"""Procedural ground-truth world: moving boxes seen by a rig of drones.

The renderer is a deterministic stand-in for a learned image encoder: each
pixel's first hit (box or ground) is found by ray casting and assigned a
fixed embedding keyed by its class and instance id.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import CameraModel, pixel_rays, project_world_to_pixel
from .exceptions import GenerationError
from .grid import GridSpec, Pose2D

GROUND = 0
VEHICLE = 1
CLASS_NAMES = {VEHICLE: "vehicle"}

#: Frames of history fed to prediction and frames predicted.
T_PAST = 3
T_FUTURE = 4


class FeatureEmbedding:
    """Fixed per-pixel features keyed by ``(class, instance id mod n_keys)``.

    Channel layout for ``channels=16``: 0 holds a constant bias of -1, 1..7 a
    class one-hot (1 = ground, 2 = vehicle), 8..15 a pseudo-random unit vector
    per instance.  The bias cancels the ground one-hot, so ground pixels have
    zero channel mean regardless of how many land in a cell; instance vectors
    are drawn from the negative orthant so vehicles always compress to a
    strictly negative value.
    """

    def __init__(self, channels=16, n_keys=64, seed=7):
        if channels < 4 or channels % 2:
            raise ValueError("channels must be an even number >= 4")
        self.channels = channels
        self.n_keys = n_keys
        self.seed = seed
        half = channels // 2
        rng = np.random.default_rng(seed)
        g = np.abs(rng.normal(size=(n_keys, half))) + 1e-3
        self._instance = -g / np.linalg.norm(g, axis=1, keepdims=True)
        self.ground_channel = 1
        self.vehicle_channel = 2
        self.norm = math.sqrt(3.0)  # bias, class and unit instance vector

    def ground(self):
        f = np.zeros(self.channels)
        f[0] = -1.0
        f[self.ground_channel] = 1.0
        return f

    def vehicle(self, instance_id):
        f = np.zeros(self.channels)
        f[0] = -1.0
        f[self.vehicle_channel] = 1.0
        f[self.channels // 2:] = self._instance[instance_id % self.n_keys]
        return f

    def encode(self, class_map, instance_map, validity):
        """Return ``(key, table)``: per-pixel row into a small feature table.

        Row 0 is the zero vector (sky), row 1 the ground, then one row per
        visible instance in ascending id order.
        """
        ids = np.unique(instance_map[instance_map > 0])
        table = np.zeros((2 + len(ids), self.channels))
        table[1] = self.ground()
        key = np.where(validity & (class_map == GROUND), 1, 0)
        for row, iid in enumerate(ids.tolist(), start=2):
            table[row] = self.vehicle(iid)
        if len(ids):
            pos = np.searchsorted(ids, instance_map)
            key = np.where(instance_map > 0, pos + 2, key)
        return key.astype(np.int64), table


@dataclass(frozen=True)
class InstanceTrack:
    id: int
    length: float
    width: float
    height: float
    poses: tuple  # ((x, y, yaw), ...) one per frame
    speed: float = 0.0  # metres per frame along the heading
    yaw_rate: float = 0.0  # radians per frame
    cls: int = VEHICLE

    def pose(self, frame):
        """Pose at ``frame``; frames past the stored horizon are extrapolated."""
        if frame < 0:
            raise IndexError(f"frame {frame} < 0")
        if frame < len(self.poses):
            return self.poses[frame]
        x, y, yaw = self.poses[-1]
        for _ in range(frame - len(self.poses) + 1):
            x, y, yaw = _advance(x, y, yaw, self.speed, self.yaw_rate)
        return (x, y, yaw)

    def corners(self, frame):
        return footprint_corners(self.pose(frame), self.length, self.width)

    def to_dict(self):
        d = asdict(self)
        d["poses"] = [list(p) for p in self.poses]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["poses"] = tuple(tuple(float(v) for v in p) for p in d["poses"])
        return cls(**d)


def _advance(x, y, yaw, speed, yaw_rate):
    return x + speed * math.cos(yaw), y + speed * math.sin(yaw), yaw + yaw_rate


def footprint_corners(pose, length, width):
    x, y, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def rectangles_overlap(a, b):
    """Separating-axis test for two convex quadrilaterals (4x2 corner arrays)."""
    for poly in (a, b):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa = a @ axis
            pb = b @ axis
            if pa.max() <= pb.min() or pb.max() <= pa.min():
                return False
    return True


@dataclass(frozen=True)
class SceneParams:
    n_instances: int = 24
    area: float = 100.0
    speed_range: tuple = (0.0, 5.0)  # m/s
    yaw_rate_range: tuple = (-0.15, 0.15)  # rad/s
    truck_fraction: float = 0.2
    car_length: tuple = (4.0, 5.0)
    car_width: tuple = (1.8, 2.0)
    car_height: tuple = (1.4, 1.8)
    truck_length: tuple = (7.0, 9.0)
    truck_width: tuple = (2.4, 2.6)
    truck_height: tuple = (3.0, 4.0)
    frame_dt: float = 0.5  # seconds, 2 Hz
    n_frames: int = T_PAST + T_FUTURE
    clearance: float = 1.5
    max_retries: int = 500
    # rig
    n_drones: int = 4
    altitude: float = 50.0
    rig_radius: float = 55.0
    image_size: tuple = (480, 224)
    hfov: float = math.pi / 2
    pitch: float | None = None  # None: optical axis aimed at the area centre
    drone_poses: tuple | None = None  # explicit ((x, y, yaw, pitch, bev_yaw), ...)

    def __post_init__(self):
        if self.n_instances < 0 or self.n_drones < 1:
            raise ValueError("counts must be non-negative (and at least one drone)")
        if self.area <= 0 or self.altitude <= 0:
            raise ValueError("area and altitude must be positive")
        if not 0.0 <= self.truck_fraction <= 1.0:
            raise ValueError("truck_fraction must lie in [0, 1]")
        for name in ("car_height", "truck_height"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi <= 10.0:
                raise ValueError(f"{name} must lie in (0, 10]")


@dataclass(frozen=True, eq=False)
class Drone:
    id: int
    camera: CameraModel
    bev_pose: Pose2D

    def to_dict(self):
        return {"id": self.id, "camera": self.camera.to_dict(),
                "bev_pose": list(self.bev_pose.as_tuple())}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["id"]), CameraModel.from_dict(d["camera"]), Pose2D(*d["bev_pose"]))


@dataclass(eq=False)
class Scene:
    seed: int
    tracks: list
    drones: list
    n_frames: int

    def to_dict(self):
        return {"seed": self.seed, "n_frames": self.n_frames,
                "tracks": [t.to_dict() for t in self.tracks],
                "drones": [d.to_dict() for d in self.drones]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["seed"]), [InstanceTrack.from_dict(t) for t in d["tracks"]],
                   [Drone.from_dict(x) for x in d["drones"]], int(d["n_frames"]))


def build_rig(params: SceneParams):
    drones = []
    if params.drone_poses is not None:
        for k, (x, y, yaw, pitch, bev_yaw) in enumerate(params.drone_poses):
            cam = CameraModel.from_pose((x, y, params.altitude), yaw, pitch,
                                        params.image_size, params.hfov)
            drones.append(Drone(k, cam, Pose2D(bev_yaw)))
        return drones
    for k in range(params.n_drones):
        phi = math.pi / 4 + k * 2 * math.pi / params.n_drones
        x, y = params.rig_radius * math.cos(phi), params.rig_radius * math.sin(phi)
        yaw = math.atan2(-y, -x)
        pitch = params.pitch
        if pitch is None:
            pitch = math.atan2(params.altitude, math.hypot(x, y)) if math.hypot(x, y) > 0 else math.pi / 2
        cam = CameraModel.from_pose((x, y, params.altitude), yaw, pitch,
                                    params.image_size, params.hfov)
        drones.append(Drone(k, cam, Pose2D(k * math.pi / 2)))
    return drones


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> Scene:
    """Deterministically generate tracks and a drone rig for ``seed``."""
    rng = np.random.default_rng(seed)
    half = params.area / 2.0
    tracks = []
    placed = []
    for iid in range(1, params.n_instances + 1):
        truck = rng.random() < params.truck_fraction
        pre = "truck_" if truck else "car_"
        length = rng.uniform(*getattr(params, pre + "length"))
        width = rng.uniform(*getattr(params, pre + "width"))
        height = rng.uniform(*getattr(params, pre + "height"))
        speed = rng.uniform(*params.speed_range) * params.frame_dt
        yaw_rate = rng.uniform(*params.yaw_rate_range) * params.frame_dt
        for _ in range(params.max_retries):
            x, y = rng.uniform(-half, half, size=2)
            yaw = rng.uniform(-math.pi, math.pi)
            grown = footprint_corners((x, y, yaw), length + 2 * params.clearance,
                                      width + 2 * params.clearance)
            if not any(rectangles_overlap(grown, other) for other in placed):
                break
        else:
            raise GenerationError(
                f"seed {seed}: could not place instance {iid} without overlap "
                f"after {params.max_retries} retries", seed=seed)
        placed.append(footprint_corners((x, y, yaw), length, width))
        poses = [(x, y, yaw)]
        for _ in range(params.n_frames - 1):
            poses.append(_advance(*poses[-1], speed, yaw_rate))
        tracks.append(InstanceTrack(iid, length, width, height,
                                    tuple(tuple(float(v) for v in p) for p in poses),
                                    float(speed), float(yaw_rate)))
    return Scene(seed, tracks, build_rig(params), params.n_frames)


@dataclass(eq=False)
class RenderedView:
    """Per-pixel render output.  Features are stored as ``feature_table[feature_key]``."""
    class_map: np.ndarray  # (H, W) int
    instance_map: np.ndarray  # (H, W) int, 0 = none
    true_height: np.ndarray  # (H, W) metres
    feature_key: np.ndarray  # (H, W) int row into feature_table
    feature_table: np.ndarray  # (K, C)
    validity: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) hit distance along the ray, NaN for sky

    @property
    def shape(self):
        return self.class_map.shape

    @property
    def feature(self):
        return self.feature_table[self.feature_key]

    @classmethod
    def from_features(cls, feature, true_height=None, validity=None, instance_map=None,
                      depth=None):
        """Wrap an arbitrary dense ``(H, W, C)`` feature grid."""
        feature = np.asarray(feature, dtype=float)
        h, w, c = feature.shape
        inst = np.zeros((h, w), dtype=np.int64) if instance_map is None else np.asarray(instance_map)
        return cls(np.where(inst > 0, VEHICLE, GROUND), inst,
                   np.zeros((h, w)) if true_height is None else np.asarray(true_height, dtype=float),
                   np.arange(h * w, dtype=np.int64).reshape(h, w), feature.reshape(-1, c),
                   np.ones((h, w), dtype=bool) if validity is None else np.asarray(validity, dtype=bool),
                   np.full((h, w), np.nan) if depth is None else np.asarray(depth, dtype=float))


def _ray_box(origins, dirs, pose, length, width, height):
    """Entry distance of rays into an oriented flat-topped box (inf on miss)."""
    x, y, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    ox, oy = origins[0] - x, origins[1] - y
    lo = np.array([-length / 2, -width / 2, 0.0])
    hi = np.array([length / 2, width / 2, height])
    o = np.array([c * ox + s * oy, -s * ox + c * oy, origins[2]])
    d = np.stack([c * dirs[..., 0] + s * dirs[..., 1],
                  -s * dirs[..., 0] + c * dirs[..., 1],
                  dirs[..., 2]], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    # parallel rays: inside the slab -> (-inf, inf), outside -> empty
    par = d == 0
    inside = (o >= lo) & (o <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_enter = tmin.max(axis=-1)
    t_exit = tmax.min(axis=-1)
    hit = (t_enter <= t_exit) & (t_exit > 0)
    return np.where(hit, np.maximum(t_enter, 0.0), np.inf)


def _image_bbox(camera, corners_xy, height):
    pts = np.concatenate([np.column_stack([corners_xy, np.zeros(4)]),
                          np.column_stack([corners_xy, np.full(4, height)])])
    uv, z = project_world_to_pixel(camera, pts)
    if np.any(z <= 1e-6):
        return 0, camera.width, 0, camera.height
    u0 = max(0, int(math.floor(uv[:, 0].min())) - 1)
    u1 = min(camera.width, int(math.ceil(uv[:, 0].max())) + 2)
    v0 = max(0, int(math.floor(uv[:, 1].min())) - 1)
    v1 = min(camera.height, int(math.ceil(uv[:, 1].max())) + 2)
    return u0, u1, v0, v1


def render_view(camera: CameraModel, tracks, frame: int,
                embedding: FeatureEmbedding | None = None) -> RenderedView:
    """Ray-cast one frame: nearest box hit, else the ground, else sky."""
    embedding = embedding or FeatureEmbedding()
    h, w = camera.height, camera.width
    v, u = np.mgrid[0:h, 0:w]
    dirs = pixel_rays(camera, u, v)
    origin = camera.origin
    validity = dirs[..., 2] < 0
    with np.errstate(divide="ignore"):
        best = np.where(validity, -camera.altitude / dirs[..., 2], np.inf)
    inst = np.zeros((h, w), dtype=np.int64)
    height_map = np.zeros((h, w))
    for track in sorted(tracks, key=lambda t: t.id):
        pose = track.pose(frame)
        u0, u1, v0, v1 = _image_bbox(camera, footprint_corners(pose, track.length, track.width),
                                     track.height)
        if u0 >= u1 or v0 >= v1:
            continue
        t = _ray_box(origin, dirs[v0:v1, u0:u1], pose, track.length, track.width, track.height)
        sub = best[v0:v1, u0:u1]
        closer = t < sub
        sub[closer] = t[closer]
        inst[v0:v1, u0:u1][closer] = track.id
        height_map[v0:v1, u0:u1][closer] = track.height
    class_map = np.where(inst > 0, VEHICLE, GROUND)
    validity = validity | (inst > 0)
    depth = np.where(validity, best, np.nan)
    key, table = embedding.encode(class_map, inst, validity)
    return RenderedView(class_map, inst, height_map, key, table, validity, depth)


@dataclass(eq=False)
class GroundTruthBev:
    occupancy: np.ndarray  # (nx, ny) bool
    instance_ids: np.ndarray  # (nx, ny) int
    flow: np.ndarray  # (nx, ny, 2) metres per frame, grid-frame axes


def _inside_rectangle(px, py, pose, length, width):
    x, y, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = px - x, py - y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    return (np.abs(lx) <= length / 2) & (np.abs(ly) <= width / 2), np.hypot(dx, dy)


def rasterize_gt_bev(tracks, frame: int, spec: GridSpec, pose: Pose2D = Pose2D(),
                     include=None) -> GroundTruthBev:
    """Rasterise footprints at cell centres of a grid expressed in ``pose``.

    ``include`` optionally restricts the instances considered.  Where
    footprints overlap the nearest footprint centre wins, then the lower id.
    """
    xs, ys = spec.cell_centers()
    wx, wy = pose.to_world(xs, ys)
    ids = np.zeros(spec.shape, dtype=np.int64)
    best = np.full(spec.shape, np.inf)
    flow = np.zeros(spec.shape + (2,))
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    for track in sorted(tracks, key=lambda t: t.id):
        if include is not None and track.id not in include:
            continue
        p0 = track.pose(frame)
        inside, dist = _inside_rectangle(wx, wy, p0, track.length, track.width)
        win = inside & (dist < best)
        if not win.any():
            continue
        p1 = track.pose(frame + 1)
        # flow of a cell: displacement of the footprint point under the motion
        lx, ly = _to_local(wx[win], wy[win], p0)
        nx, ny = _from_local(lx, ly, p1)
        fx, fy = nx - wx[win], ny - wy[win]
        flow[win] = np.column_stack([c * fx + s * fy, -s * fx + c * fy])
        ids[win] = track.id
        best[win] = dist[win]
    return GroundTruthBev(ids > 0, ids, flow)


def _to_local(x, y, pose):
    px, py, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    dx, dy = x - px, y - py
    return c * dx + s * dy, -s * dx + c * dy


def _from_local(lx, ly, pose):
    px, py, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    return c * lx - s * ly + px, s * lx + c * ly + py


def instance_center(track, frame, pose: Pose2D = Pose2D()):
    x, y, _ = track.pose(frame)
    return np.array(pose.from_world(x, y), dtype=float)


def visible_instances(views, min_pixels=1):
    """Ids covering at least ``min_pixels`` pixels in any of ``views``."""
    counts = {}
    for view in views:
        ids, n = np.unique(view.instance_map[view.instance_map > 0], return_counts=True)
        for i, c in zip(ids.tolist(), n.tolist()):
            counts[i] = max(counts.get(i, 0), c)
    return {i for i, c in counts.items() if c >= min_pixels}
