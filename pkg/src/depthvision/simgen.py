"""Procedural driving scenes: ray-cast camera and LiDAR renders plus QA ground truth.

World frame is the ego/LiDAR frame: x forward, y left, z up, sensor at the
origin, ground plane at ``z = -sensor_height``.  The camera is co-located and
looks along +x (camera frame: x right, y down, z forward).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageRGB, PointCloud, encode_png
from .geometry import Extrinsic, Intrinsic
from .lama import mean_luminance, to_gray

CLASSES = ("car", "truck", "pedestrian", "pole")
PLURALS = {"car": "cars", "truck": "trucks", "pedestrian": "pedestrians", "pole": "poles"}
CLASS_SIZE = {
    "car": (4.5, 1.8, 1.5),
    "truck": (8.0, 2.5, 3.2),
    "pedestrian": (0.6, 0.6, 1.8),
    "pole": (0.3, 0.3, 4.0),
}
CLASS_COLOR = {
    "car": (0.75, 0.15, 0.12),
    "truck": (0.15, 0.3, 0.7),
    "pedestrian": (0.9, 0.75, 0.2),
    "pole": (0.55, 0.55, 0.5),
}
CLASS_INTENSITY = {"car": 0.6, "truck": 0.5, "pedestrian": 0.4, "pole": 0.7}
GROUND_INTENSITY = 0.2
GROUND_COLOR = (0.33, 0.33, 0.35)
LANE_COLOR = (0.9, 0.9, 0.85)
SKY_TOP = (0.35, 0.55, 0.9)
SKY_HORIZON = (0.75, 0.82, 0.92)
# face shading by local axis of the hit face: x (front/back), y (sides), z (top)
FACE_SHADE = (0.8, 0.65, 1.0)

SKY_ID = -1
GROUND_ID = 0

# rotation taking LiDAR-frame vectors to camera-frame vectors
LIDAR_TO_CAMERA = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])

SAFETY_DISTANCE = 10.0


@dataclass(frozen=True)
class SensorRig:
    width: int = 128
    height: int = 128
    camera_hfov: float = 90.0
    sensor_height: float = 1.7
    channels: int = 64
    azimuth_steps: int = 256
    lidar_hfov: float = 90.0
    lidar_vfov: float = 74.0
    max_range: float = 100.0

    def intrinsic(self) -> Intrinsic:
        return Intrinsic.from_fov(self.width, self.height, self.camera_hfov)

    def extrinsic(self) -> Extrinsic:
        return Extrinsic(LIDAR_TO_CAMERA, np.zeros(3))

    def elevations(self) -> np.ndarray:
        """Channel elevation angles in radians, top to bottom, symmetric about the horizon."""
        half = np.radians(self.lidar_vfov) / 2
        return np.linspace(half, -half, self.channels)

    def azimuths(self) -> np.ndarray:
        """Azimuth angles in radians, left (+y) to right."""
        half = np.radians(self.lidar_hfov) / 2
        return np.linspace(half, -half, self.azimuth_steps)


@dataclass(frozen=True)
class SceneObject:
    cls: str
    x: float
    y: float
    yaw: float
    size: tuple[float, float, float]
    color: tuple[float, float, float]

    def center(self, ground_z: float) -> np.ndarray:
        return np.array([self.x, self.y, ground_z + self.size[2] / 2])

    def rotation(self) -> np.ndarray:
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    objects: tuple[SceneObject, ...] = ()
    ambient: float = 1.0
    extent: float = 60.0
    rig: SensorRig = field(default_factory=SensorRig)

    def __post_init__(self):
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError(f"ambient factor must be in [0, 1], got {self.ambient}")
        for o in self.objects:
            if o.cls not in CLASSES:
                raise ValueError(f"unknown class {o.cls!r}")
            if abs(o.x) > self.extent or abs(o.y) > self.extent:
                raise ValueError(f"object at ({o.x}, {o.y}) outside ground extent {self.extent}")

    @property
    def ground_z(self) -> float:
        return -self.rig.sensor_height

    def to_dict(self) -> dict:
        return asdict(self)


def random_scene(seed: int, rig: SensorRig = SensorRig(), ambient: float = 1.0,
                 max_objects: int = 6) -> SceneSpec:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_objects + 1))
    objs: list[SceneObject] = []
    tries = 0
    while len(objs) < n and tries < 200:
        tries += 1
        cls = CLASSES[int(rng.choice(4, p=[0.45, 0.15, 0.25, 0.15]))]
        x = float(rng.uniform(4.0, 40.0))
        if cls in ("car", "truck"):
            y = float(rng.choice([-3.5, 0.0, 3.5]) + rng.normal(0, 0.4))
            yaw = float(rng.normal(0, 0.15))
        else:
            y = float(rng.choice([-1, 1]) * rng.uniform(2.5, 0.8 * x))
            yaw = float(rng.uniform(-np.pi, np.pi))
        if abs(y) > 0.9 * x:
            continue
        size = CLASS_SIZE[cls]
        radius = 0.5 * np.hypot(size[0], size[1])
        if x - radius < 2.0:
            continue
        if any(np.hypot(x - o.x, y - o.y) < radius + 0.5 * np.hypot(*o.size[:2]) + 0.3 for o in objs):
            continue
        base = np.asarray(CLASS_COLOR[cls])
        color = tuple(float(c) for c in np.clip(base + rng.normal(0, 0.06, 3), 0.05, 0.95))
        objs.append(SceneObject(cls, x, y, yaw, size, color))
    return SceneSpec(seed, tuple(objs), ambient, rig=rig)


# --- ray casting -------------------------------------------------------------


def cast_rays(origin: np.ndarray, dirs: np.ndarray, spec: SceneSpec):
    """First hit of each ray against the ground and the boxes.

    Returns ``(t, hit_id, face_axis)``: ``t`` is the ray parameter (inf on
    a miss), ``hit_id`` is -1 sky, 0 ground, k+1 for object k; ``face_axis``
    is the local axis of the box face that was hit (-1 otherwise).
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    m = dirs.shape[0]
    t_best = np.full(m, np.inf)
    hit = np.full(m, SKY_ID, dtype=np.int64)
    face = np.full(m, -1, dtype=np.int64)

    dz = dirs[:, 2]
    down = dz < 0
    t_ground = np.full(m, np.inf)
    t_ground[down] = (spec.ground_z - origin[2]) / dz[down]
    g = (t_ground > 0) & (t_ground < t_best)
    t_best[g] = t_ground[g]
    hit[g] = GROUND_ID

    for k, obj in enumerate(spec.objects):
        rot = obj.rotation()
        half = np.asarray(obj.size) / 2
        o_loc = rot.T @ (origin - obj.center(spec.ground_z))
        d_loc = dirs @ rot
        d_safe = np.where(np.abs(d_loc) < 1e-15, 1e-15, d_loc)
        t1 = (-half - o_loc) / d_safe
        t2 = (half - o_loc) / d_safe
        tnear = np.minimum(t1, t2)
        tfar = np.maximum(t1, t2)
        t_enter = tnear.max(axis=1)
        axis = tnear.argmax(axis=1)
        t_exit = tfar.min(axis=1)
        ok = (t_enter <= t_exit) & (t_enter > 0) & (t_enter < t_best)
        t_best[ok] = t_enter[ok]
        hit[ok] = k + 1
        face[ok] = axis[ok]
    face[hit <= GROUND_ID] = -1
    return t_best, hit, face


def camera_rays(spec: SceneSpec):
    """Ray origin (LiDAR frame) and unit-free directions through every pixel center."""
    intr = spec.rig.intrinsic()
    ext = spec.rig.extrinsic()
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    d_cam = np.stack([(u + 0.5 - intr.cx) / intr.fx, (v + 0.5 - intr.cy) / intr.fy,
                      np.ones(u.shape)], axis=-1).reshape(-1, 3)
    origin = -ext.rotation.T @ ext.translation
    return origin, d_cam @ ext.rotation  # rows are R^T d


def render_with_ids(spec: SceneSpec):
    """Day render plus per-pixel hit ids and camera-frame depth."""
    rig = spec.rig
    h, w = rig.height, rig.width
    origin, dirs = camera_rays(spec)
    t, hit, face = cast_rays(origin, dirs, spec)

    img = np.empty((h * w, 3))
    rows = np.repeat(np.arange(h), w)
    frac = np.clip(rows / max(h / 2.0, 1.0), 0.0, 1.0)[:, None]
    img[:] = (1 - frac) * np.asarray(SKY_TOP) + frac * np.asarray(SKY_HORIZON)

    g = hit == GROUND_ID
    if g.any():
        p = origin + dirs[g] * t[g][:, None]
        col = np.tile(np.asarray(GROUND_COLOR), (p.shape[0], 1))
        lane = (np.abs(np.abs(p[:, 1]) - 1.75) < 0.12) & (np.mod(p[:, 0], 6.0) < 3.0)
        col[lane] = LANE_COLOR
        img[g] = col
    for k, obj in enumerate(spec.objects):
        sel = hit == k + 1
        if sel.any():
            shade = np.asarray(FACE_SHADE)[face[sel]]
            img[sel] = np.asarray(obj.color)[None, :] * shade[:, None]

    # camera-frame depth Z equals the ray parameter for directions with unit z
    depth = np.where(np.isfinite(t), t, 0.0).reshape(h, w)
    return ImageRGB(np.clip(img, 0.0, 1.0).reshape(h, w, 3)), hit.reshape(h, w), depth


def render_rgb(spec: SceneSpec) -> ImageRGB:
    return render_with_ids(spec)[0]


def lidar_directions(rig: SensorRig) -> np.ndarray:
    el = rig.elevations()[:, None]
    az = rig.azimuths()[None, :]
    d = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                  np.broadcast_to(np.sin(el), (el.size, az.size))], axis=-1)
    return d.reshape(-1, 3)


def render_lidar_with_ids(spec: SceneSpec):
    dirs = lidar_directions(spec.rig)
    t, hit, _ = cast_rays(np.zeros(3), dirs, spec)
    keep = np.isfinite(t) & (t <= spec.rig.max_range)
    pts = dirs[keep] * t[keep][:, None]
    ids = hit[keep]
    inten = np.full(ids.shape, GROUND_INTENSITY)
    for k, obj in enumerate(spec.objects):
        inten[ids == k + 1] = CLASS_INTENSITY[obj.cls]
    return PointCloud(pts, inten), ids


def render_lidar(spec: SceneSpec) -> PointCloud:
    return render_lidar_with_ids(spec)[0]


def darken(img: ImageRGB, a: float, noise_sigma: float = 0.0, seed: int = 0) -> ImageRGB:
    """Scale by the ambient factor and add clipped Gaussian sensor noise."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"ambient factor must be in [0, 1], got {a}")
    out = a * img.data
    if noise_sigma > 0:
        out = out + np.random.default_rng(seed).normal(0.0, noise_sigma, img.data.shape)
    return ImageRGB(np.clip(out, 0.0, 1.0))


def luminance_filter(images: list[ImageRGB], threshold: float = 0.4) -> list[ImageRGB]:
    """Keep images whose mean luminance is at least ``threshold``."""
    return [im for im in images if mean_luminance(to_gray(im)) >= threshold]


# --- QA ground truth -----------------------------------------------------------


@dataclass(frozen=True)
class QASample:
    scene_id: str
    question: str
    category: str  # "exist" | "count" | "object"
    answer: int | str

    def to_dict(self) -> dict:
        return asdict(self)


def box_distance(point: np.ndarray, obj: SceneObject, ground_z: float) -> float:
    """Euclidean distance from ``point`` to the closest point of the box (0 if inside)."""
    local = obj.rotation().T @ (np.asarray(point) - obj.center(ground_z))
    excess = np.maximum(np.abs(local) - np.asarray(obj.size) / 2, 0.0)
    return float(np.sqrt((excess ** 2).sum()))


def frustum_objects(spec: SceneSpec) -> list[tuple[int, SceneObject, float, float]]:
    """Objects whose center projects inside the image in front of the camera.

    Each entry is ``(index, object, distance, off_axis_angle)``.
    """
    intr = spec.rig.intrinsic()
    ext = spec.rig.extrinsic()
    cam_origin = -ext.rotation.T @ ext.translation
    out = []
    for k, obj in enumerate(spec.objects):
        pc = ext.rotation @ obj.center(spec.ground_z) + ext.translation
        if pc[2] <= 0:
            continue
        u = intr.fx * pc[0] / pc[2] + intr.cx
        v = intr.fy * pc[1] / pc[2] + intr.cy
        if not (0 <= u < intr.width and 0 <= v < intr.height):
            continue
        angle = float(np.arctan2(np.hypot(pc[0], pc[1]), pc[2]))
        out.append((k, obj, box_distance(cam_origin, obj, spec.ground_z), angle))
    return out


def exist_question(safety_distance: float) -> str:
    return f"How many safety-critical objects are within {safety_distance:g} meters of the vehicle?"


def count_question(cls: str) -> str:
    return f"How many {PLURALS[cls]} are visible in the image?"


OBJECT_QUESTION = "What type of object is closest to the center of the image?"


def make_qa(spec: SceneSpec, safety_distance: float = SAFETY_DISTANCE,
            scene_id: str | None = None) -> list[QASample]:
    sid = scene_id if scene_id is not None else f"seed{spec.seed}"
    vis = frustum_objects(spec)
    qa = [QASample(sid, exist_question(safety_distance), "exist",
                   sum(1 for _, _, d, _ in vis if d < safety_distance))]
    for cls in CLASSES:
        qa.append(QASample(sid, count_question(cls), "count", sum(1 for _, o, _, _ in vis if o.cls == cls)))
    if vis:
        nearest = min(vis, key=lambda e: (e[3], e[0]))
        qa.append(QASample(sid, OBJECT_QUESTION, "object", nearest[1].cls))
    return qa


# --- dataset writer ----------------------------------------------------------


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def is_night(index: int, night_fraction: float) -> bool:
    # spreads night scenes evenly through the sequence
    return int(np.floor((index + 1) * night_fraction)) > int(np.floor(index * night_fraction))


def write_dataset(out_dir, n_scenes: int, seed: int = 0, rig: SensorRig = SensorRig(),
                  night_fraction: float = 0.5, night_ambient: float = 0.1,
                  noise_sigma: float = 0.01, val_every: int = 4,
                  safety_distance: float = SAFETY_DISTANCE) -> dict:
    """Write one directory per scene plus ``manifest.json``; returns the manifest."""
    from .ingest import write_calibration, write_cloud_bin

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = []
    for i in range(n_scenes):
        sid = f"scene_{i:04d}"
        night = is_night(i, night_fraction)
        spec = random_scene(scene_seed(seed, i), rig, ambient=night_ambient)
        d = out / sid
        d.mkdir(exist_ok=True)
        rgb = render_rgb(spec)
        (d / "rgb.png").write_bytes(encode_png(rgb))
        dark = darken(rgb, spec.ambient, noise_sigma, seed=scene_seed(seed, i) ^ 0x5EED)
        (d / "rgb_dark.png").write_bytes(encode_png(dark))
        write_cloud_bin(d / "cloud.bin", render_lidar(spec), stride=4)
        write_calibration(d / "calib.json", rig.extrinsic(), rig.intrinsic())
        qa = [q.to_dict() for q in make_qa(spec, safety_distance, sid)]
        (d / "qa.json").write_text(json.dumps(qa, indent=1) + "\n")
        (d / "scene.json").write_text(json.dumps(spec.to_dict(), sort_keys=True, indent=1) + "\n")
        scenes.append({
            "id": sid,
            "dir": sid,
            "split": "val" if val_every and i % val_every == val_every - 1 else "train",
            "lighting": "night" if night else "day",
        })
    manifest = {
        "format": "depthvision-dataset-v1",
        "seed": seed,
        "rig": asdict(rig),
        "night_ambient": night_ambient,
        "noise_sigma": noise_sigma,
        "safety_distance": safety_distance,
        "scenes": scenes,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return manifest
