"""Synthetic video-gaze sequences and their on-disk dataset format.

Frames show a schematic face whose two pupils sit at a position that is an
affine function of the (person-biased) gaze. Distractors (moving background
blobs, a flickering mouth/brow region, illumination drift) change pixels
everywhere except inside the eye regions, so labels stay decodable from
pixels by construction.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"STGV"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHHIHH")  # magic, version, flags, n, h0, w0 -> 16 bytes
FLAG_POG = 1
MIN_IMAGE = 16

PITCH_BOUND = 0.5
YAW_BOUND = 1.0


class DataError(ValueError):
    """Dataset files are missing, corrupt, or inconsistent."""

    def __init__(self, message: str, path: str | Path | None = None) -> None:
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = str(path) if path is not None else None


@dataclass(frozen=True)
class DistractorSpec:
    background_motion: float = 0.0
    expression_flicker: float = 0.0
    illumination_drift: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("background_motion", "expression_flicker", "illumination_drift"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @property
    def active(self) -> bool:
        return self.background_motion > 0 or self.expression_flicker > 0 or self.illumination_drift > 0


@dataclass
class VideoSequence:
    frames: np.ndarray  # n x h0 x w0 x 3 in [0, 1]
    gaze: np.ndarray  # n x 2 (pitch, yaw) radians
    pog: np.ndarray | None = None  # n x 2 in [0, 1]^2
    person_id: str = "p0"
    seq_id: str = "s0"

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.gaze = np.asarray(self.gaze, dtype=np.float64)
        if self.pog is not None:
            self.pog = np.asarray(self.pog, dtype=np.float64)
        n = self.frames.shape[0]
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must be n x h0 x w0 x 3, got {self.frames.shape}")
        if n < 2:
            raise ValueError("a video sequence needs at least 2 frames")
        if self.gaze.shape != (n, 2):
            raise ValueError(f"gaze must be {n} x 2, got {self.gaze.shape}")
        if np.any(np.abs(self.gaze[:, 0]) > np.pi / 2) or np.any(np.abs(self.gaze[:, 1]) > np.pi):
            raise ValueError("gaze outside |pitch| <= pi/2, |yaw| <= pi")
        if self.pog is not None:
            if self.pog.shape != (n, 2):
                raise ValueError(f"pog must be {n} x 2, got {self.pog.shape}")
            if np.any(self.pog < 0) or np.any(self.pog > 1):
                raise ValueError("pog outside [0, 1]^2")

    @property
    def n(self) -> int:
        return self.frames.shape[0]

    @property
    def image_size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class FaceLayout:
    """Face geometry in pixels for one image size, plus the gaze-to-pupil map."""

    h0: int
    w0: int

    @property
    def eye_centers(self) -> tuple[tuple[float, float], tuple[float, float]]:
        cy = 0.40 * (self.h0 - 1)
        return (cy, 0.27 * (self.w0 - 1)), (cy, 0.73 * (self.w0 - 1))

    @property
    def gain(self) -> tuple[float, float]:
        """Pupil displacement in pixels per radian of (pitch, yaw)."""
        return 0.12 * self.h0, 0.12 * self.w0

    @property
    def pupil_sigma(self) -> float:
        return 0.025 * min(self.h0, self.w0)

    @property
    def eye_radii(self) -> tuple[float, float]:
        gp, gy = self.gain
        m = 3.5 * self.pupil_sigma
        return gp * (PITCH_BOUND + 0.15) + m, gy * (YAW_BOUND + 0.15) + m

    def pupil_offset(self, gaze: np.ndarray) -> np.ndarray:
        """(dy, dx) pixel offsets; looking up (pitch > 0) moves the pupil up."""
        gp, gy = self.gain
        gaze = np.asarray(gaze, dtype=np.float64)
        return np.stack([-gp * gaze[..., 0], -gy * gaze[..., 1]], axis=-1)

    def gaze_from_offset(self, offset: np.ndarray) -> np.ndarray:
        gp, gy = self.gain
        offset = np.asarray(offset, dtype=np.float64)
        return np.stack([-offset[..., 0] / gp, -offset[..., 1] / gy], axis=-1)

    def eye_mask(self) -> np.ndarray:
        yy, xx = np.mgrid[0:self.h0, 0:self.w0].astype(np.float64)
        ry, rx = self.eye_radii
        mask = np.zeros((self.h0, self.w0), dtype=bool)
        for cy, cx in self.eye_centers:
            # superellipse keeps the pupil blob untruncated near the corners
            mask |= (np.abs(yy - cy) / ry) ** 4 + (np.abs(xx - cx) / rx) ** 4 <= 1.0
        return mask

    def face_mask(self) -> np.ndarray:
        yy, xx = np.mgrid[0:self.h0, 0:self.w0].astype(np.float64)
        cy, cx = 0.52 * (self.h0 - 1), 0.5 * (self.w0 - 1)
        return ((yy - cy) / (0.47 * self.h0)) ** 2 + ((xx - cx) / (0.47 * self.w0)) ** 2 <= 1.0

    def expression_mask(self) -> np.ndarray:
        """Mouth and brow strips: the regions expression flicker modulates."""
        yy, xx = np.mgrid[0:self.h0, 0:self.w0].astype(np.float64)
        mouth = ((yy - 0.78 * self.h0) / (0.07 * self.h0)) ** 2 + ((xx - 0.5 * self.w0) / (0.18 * self.w0)) ** 2 <= 1
        ry, _ = self.eye_radii
        brow_y = self.eye_centers[0][0] - ry - 0.05 * self.h0
        brows = np.zeros_like(mouth)
        for _, cx in self.eye_centers:
            brows |= (((yy - brow_y) / (0.03 * self.h0)) ** 2 + ((xx - cx) / (0.12 * self.w0)) ** 2) <= 1
        return (mouth | brows) & ~self.eye_mask()

    def to_json(self) -> dict:
        gp, gy = self.gain
        return {
            "image_size": [self.h0, self.w0],
            "eye_centers": [list(c) for c in self.eye_centers],
            "eye_radii": list(self.eye_radii),
            "pupil_sigma": self.pupil_sigma,
            "pupil_offset_per_rad": {"pitch_to_dy": -gp, "yaw_to_dx": -gy},
        }


SCLERA = np.array([0.95, 0.95, 0.95])


@dataclass(frozen=True)
class Appearance:
    skin: np.ndarray
    iris: np.ndarray
    background: np.ndarray

    @classmethod
    def for_person(cls, person_id: str) -> "Appearance":
        rng = np.random.default_rng(zlib.crc32(person_id.encode("utf-8")))
        tone = rng.uniform(0.35, 0.8)
        skin = np.clip(np.array([tone + 0.08, tone, tone - 0.08]) + rng.normal(0, 0.02, 3), 0.05, 0.95)
        iris = np.clip(rng.uniform(0.02, 0.2, 3), 0, 1)
        background = rng.uniform(0.1, 0.6, 3)
        return cls(skin, iris, background)


def ou_gaze_walk(n: int, rng: np.random.Generator, reversion: float = 0.15) -> np.ndarray:
    """Bounded Ornstein-Uhlenbeck walk in (pitch, yaw), started from stationarity."""
    std = np.array([0.5 * PITCH_BOUND, 0.55 * YAW_BOUND])
    bound = np.array([PITCH_BOUND, YAW_BOUND])
    step_std = std * np.sqrt(1.0 - (1.0 - reversion) ** 2)
    g = np.empty((n, 2))
    g[0] = np.clip(rng.normal(0.0, std), -bound, bound)
    for t in range(1, n):
        g[t] = np.clip((1.0 - reversion) * g[t - 1] + rng.normal(0.0, step_std), -bound, bound)
    return g


def gaze_to_pog(gaze: np.ndarray) -> np.ndarray:
    """Affine map of bounded gaze onto normalised screen coordinates ``(x, y)``."""
    x = 0.5 + 0.5 * gaze[:, 1] / YAW_BOUND
    y = 0.5 - 0.5 * gaze[:, 0] / PITCH_BOUND
    return np.clip(np.stack([x, y], axis=1), 0.0, 1.0)


def _blob(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, sigma: float) -> np.ndarray:
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))


def generate_sequence(n: int, image_size: tuple[int, int] = (64, 64), distractors: DistractorSpec | None = None,
                      person_bias: tuple[float, float] = (0.0, 0.0), seed: int = 0, person_id: str = "p0",
                      seq_id: str | None = None) -> VideoSequence:
    """Render one labelled sequence. Output is a pure function of the arguments."""
    if n < 2:
        raise ValueError("n must be >= 2")
    h0, w0 = (int(image_size[0]), int(image_size[1]))
    if h0 < MIN_IMAGE or w0 < MIN_IMAGE:
        raise ValueError(f"image size {h0}x{w0} is too small to place a face (minimum {MIN_IMAGE}x{MIN_IMAGE})")
    distractors = distractors or DistractorSpec()
    layout = FaceLayout(h0, w0)
    look = Appearance.for_person(person_id)

    gaze = ou_gaze_walk(n, np.random.default_rng([seed, 0]))
    rendered = gaze + np.asarray(person_bias, dtype=np.float64)
    offsets = layout.pupil_offset(rendered)

    yy, xx = np.mgrid[0:h0, 0:w0].astype(np.float64)
    eye = layout.eye_mask()
    face = layout.face_mask()
    expr = layout.expression_mask()
    sigma = layout.pupil_sigma

    base = np.empty((h0, w0, 3))
    base[:] = look.background
    base[face] = look.skin
    brow_color = look.skin * 0.55

    drng = np.random.default_rng([seed, 1, distractors.seed])
    n_blobs = 3
    blob_pos = drng.uniform([0, 0], [h0, w0], size=(n_blobs, 2))
    blob_dir = drng.normal(size=(n_blobs, 2))
    blob_dir /= np.linalg.norm(blob_dir, axis=1, keepdims=True)
    blob_color = drng.uniform(0, 1, size=(n_blobs, 3))
    blob_sigma = 0.08 * min(h0, w0)
    flicker_phase = drng.uniform(0, 2 * np.pi)
    flicker_period = drng.uniform(4.0, 9.0)
    illum = 1.0 + np.concatenate([[0.0], np.cumsum(drng.normal(0, 1, n - 1))]) * distractors.illumination_drift

    frames = np.empty((n, h0, w0, 3))
    for t in range(n):
        img = base.copy()
        if distractors.background_motion > 0:
            bg = np.zeros((h0, w0, 3))
            weight = np.zeros((h0, w0))
            for b in range(n_blobs):
                cy, cx = (blob_pos[b] + blob_dir[b] * distractors.background_motion * t) % [h0, w0]
                g = _blob(yy, xx, cy, cx, blob_sigma)
                bg += g[..., None] * blob_color[b]
                weight += g
            w = np.clip(weight, 0, 1)[..., None]
            mix = (1 - w) * img + w * np.where(weight[..., None] > 0, bg / np.maximum(weight[..., None], 1e-12), 0)
            img = np.where(face[..., None], img, mix)
        if distractors.expression_flicker > 0:
            amp = distractors.expression_flicker * 0.5 * (1 + np.sin(2 * np.pi * t / flicker_period + flicker_phase))
            img[expr] = (1 - amp) * img[expr] + amp * brow_color
        else:
            img[expr] = 0.7 * img[expr] + 0.3 * brow_color
        if distractors.illumination_drift > 0:
            img[~eye] = img[~eye] * illum[t]
        dy, dx = offsets[t]
        g = sum(_blob(yy, xx, cy + dy, cx + dx, sigma) for cy, cx in layout.eye_centers)[..., None]
        img = np.where(eye[..., None], SCLERA + g * (look.iris - SCLERA), img)
        frames[t] = np.clip(img, 0.0, 1.0)

    return VideoSequence(frames, gaze, gaze_to_pog(gaze), person_id=person_id,
                         seq_id=seq_id if seq_id is not None else f"{person_id}_s{seed}")


def decode_gaze_from_pixels(frames: np.ndarray, layout: FaceLayout | None = None) -> np.ndarray:
    """Invert the renderer: darkness-weighted pupil centroid per eye, averaged.

    Used as an independent oracle on distractor-free or distractor-laden
    frames alike, since the eye regions are never touched by distractors.
    """
    frames = np.asarray(frames, dtype=np.float64)
    n, h0, w0, _ = frames.shape
    layout = layout or FaceLayout(h0, w0)
    yy, xx = np.mgrid[0:h0, 0:w0].astype(np.float64)
    ry, rx = layout.eye_radii
    out = np.zeros((n, 2))
    for cy, cx in layout.eye_centers:
        region = (np.abs(yy - cy) / ry) ** 4 + (np.abs(xx - cx) / rx) ** 4 <= 1.0
        dark = np.clip((SCLERA - frames).sum(axis=-1), 0, None) * region
        mass = dark.sum(axis=(1, 2))
        py = (dark * yy).sum(axis=(1, 2)) / mass
        px = (dark * xx).sum(axis=(1, 2)) / mass
        out += layout.gaze_from_offset(np.stack([py - cy, px - cx], axis=1))
    return out / 2.0


# ---------------------------------------------------------------------------
# dataset generation configs and storage
# ---------------------------------------------------------------------------

@dataclass
class DataGenConfig:
    persons: int = 10
    sequences_per_person: int = 4
    eval_sequences_per_person: int = 1
    frames: int = 30
    image_size: tuple[int, int] = (64, 64)
    distractors: DistractorSpec = field(default_factory=DistractorSpec)
    person_bias: tuple[float, float] | None = None
    person_bias_std: float = 0.0
    person_prefix: str = "p"
    seed: int = 0

    def validate(self) -> None:
        h0, w0 = self.image_size
        if h0 < MIN_IMAGE or w0 < MIN_IMAGE:
            raise ValueError(f"image size {h0}x{w0} is too small (minimum {MIN_IMAGE}x{MIN_IMAGE})")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if self.persons < 1 or self.sequences_per_person < 0 or self.eval_sequences_per_person < 0:
            raise ValueError("persons must be >= 1 and sequence counts >= 0")
        if self.sequences_per_person + self.eval_sequences_per_person < 1:
            raise ValueError("each person needs at least one sequence")
        if self.person_bias_std < 0:
            raise ValueError("person_bias_std must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "DataGenConfig":
        d = dict(d)
        if "distractors" in d and isinstance(d["distractors"], dict):
            d["distractors"] = DistractorSpec(**d["distractors"])
        if "image_size" in d:
            d["image_size"] = tuple(d["image_size"])
        if d.get("person_bias") is not None:
            d["person_bias"] = tuple(d["person_bias"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        if self.person_bias is not None:
            d["person_bias"] = list(self.person_bias)
        return d


def person_biases(cfg: DataGenConfig) -> dict[str, tuple[float, float]]:
    rng = np.random.default_rng([cfg.seed, 7])
    out = {}
    for p in range(cfg.persons):
        pid = f"{cfg.person_prefix}{p:03d}"
        if cfg.person_bias is not None:
            out[pid] = (float(cfg.person_bias[0]), float(cfg.person_bias[1]))
        elif cfg.person_bias_std > 0:
            b = rng.normal(0.0, cfg.person_bias_std, 2)
            out[pid] = (float(b[0]), float(b[1]))
        else:
            out[pid] = (0.0, 0.0)
    return out


def generate_dataset(cfg: DataGenConfig) -> list[tuple[VideoSequence, str]]:
    """All sequences of a config, each tagged with its split ("train" or "eval")."""
    cfg.validate()
    biases = person_biases(cfg)
    out = []
    for p, (pid, bias) in enumerate(biases.items()):
        total = cfg.sequences_per_person + cfg.eval_sequences_per_person
        for s in range(total):
            seed = int(np.random.default_rng([cfg.seed, p, s]).integers(0, 2**31 - 1))
            spec = DistractorSpec(cfg.distractors.background_motion, cfg.distractors.expression_flicker,
                                  cfg.distractors.illumination_drift, cfg.distractors.seed + 1000 * p + s)
            seq = generate_sequence(cfg.frames, cfg.image_size, spec, bias, seed=seed, person_id=pid,
                                    seq_id=f"{pid}_s{s:02d}")
            out.append((seq, "train" if s < cfg.sequences_per_person else "eval"))
    return out


@dataclass
class ManifestRecord:
    path: str
    person_id: str
    seq_id: str
    n: int
    label_path: str
    split: str = "train"


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    format_version: int = FORMAT_VERSION
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"format_version": self.format_version, "meta": self.meta,
                           "records": [asdict(r) for r in self.records]}, indent=2, sort_keys=True)


def write_sequence_file(seq: VideoSequence, path: Path) -> None:
    n, h0, w0, _ = seq.frames.shape
    flags = FLAG_POG if seq.pog is not None else 0
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, FORMAT_VERSION, flags, n, h0, w0))
        fh.write(seq.frames.astype("<f8").tobytes())
        fh.write(seq.gaze.astype("<f8").tobytes())
        if seq.pog is not None:
            fh.write(seq.pog.astype("<f8").tobytes())


def read_sequence_file(path: Path, person_id: str = "p0", seq_id: str = "s0") -> VideoSequence:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read sequence file ({exc.strerror})", path) from None
    if len(raw) < HEADER.size:
        raise DataError("truncated header", path)
    magic, version, flags, n, h0, w0 = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError("bad magic", path)
    if version != FORMAT_VERSION:
        raise DataError(f"format version {version} is not supported (expected {FORMAT_VERSION})", path)
    nf = n * h0 * w0 * 3
    ng = n * 2
    npog = n * 2 if flags & FLAG_POG else 0
    body = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    if body.size != nf + ng + npog:
        raise DataError(f"payload holds {body.size} values, header implies {nf + ng + npog}", path)
    frames = body[:nf].reshape(n, h0, w0, 3).astype(np.float64)
    gaze = body[nf:nf + ng].reshape(n, 2).astype(np.float64)
    pog = body[nf + ng:].reshape(n, 2).astype(np.float64) if npog else None
    try:
        return VideoSequence(frames, gaze, pog, person_id=person_id, seq_id=seq_id)
    except ValueError as exc:
        raise DataError(f"invalid sequence contents ({exc})", path) from None


def _write_labels(seq: VideoSequence, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "pitch", "yaw", "pog_x", "pog_y"])
        for t in range(seq.n):
            pog = seq.pog[t] if seq.pog is not None else (float("nan"), float("nan"))
            w.writerow([t, repr(float(seq.gaze[t, 0])), repr(float(seq.gaze[t, 1])),
                        repr(float(pog[0])), repr(float(pog[1]))])


def _read_labels(path: Path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return np.array([[float(r["pitch"]), float(r["yaw"])] for r in rows])
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot parse label file ({exc})", path) from None


def write_dataset(sequences: Sequence[VideoSequence | tuple[VideoSequence, str]], directory: str | Path,
                  meta: dict | None = None) -> DatasetManifest:
    """Write sequences plus ``manifest.json`` into ``directory``."""
    root = Path(directory)
    (root / "sequences").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    records = []
    for item in sequences:
        seq, split = item if isinstance(item, tuple) else (item, "train")
        rel = f"sequences/{seq.seq_id}.bin"
        lab = f"labels/{seq.seq_id}.csv"
        write_sequence_file(seq, root / rel)
        _write_labels(seq, root / lab)
        records.append(ManifestRecord(rel, seq.person_id, seq.seq_id, seq.n, lab, split))
    manifest = DatasetManifest(records, meta=dict(meta or {}))
    (root / "manifest.json").write_text(manifest.to_json())
    return manifest


def read_manifest(directory: str | Path) -> DatasetManifest:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise DataError("manifest missing", path)
    try:
        doc = json.loads(path.read_text())
        version = int(doc["format_version"])
        records = [ManifestRecord(**r) for r in doc["records"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"corrupt manifest ({exc})", path) from None
    if version != FORMAT_VERSION:
        raise DataError(f"manifest format version {version} is not supported (expected {FORMAT_VERSION})", path)
    return DatasetManifest(records, version, doc.get("meta", {}))


def load_dataset(directory: str | Path, split: str | None = None) -> Iterator[VideoSequence]:
    """Yield sequences listed in the manifest, checking each record's integrity."""
    root = Path(directory)
    manifest = read_manifest(root)
    for rec in manifest.records:
        if split is not None and rec.split != split:
            continue
        seq = read_sequence_file(root / rec.path, rec.person_id, rec.seq_id)
        if seq.n != rec.n:
            raise DataError(f"record {rec.seq_id}: manifest says n={rec.n} but file holds {seq.n} frames",
                            root / rec.path)
        labels = _read_labels(root / rec.label_path)
        if labels.shape != seq.gaze.shape or not np.array_equal(labels, seq.gaze):
            raise DataError(f"record {rec.seq_id}: label file disagrees with sequence file", root / rec.label_path)
        yield seq
