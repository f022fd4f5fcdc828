"""Checkpoints (binary PLY + JSON sidecar) and dataset manifests (JSON + PNG/PFM)."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DatasetError, InvalidParameterError, ParseError, VersionError
from .types import Camera, FrameBundle, GaussianSet, Modality, SetKind

CHECKPOINT_VERSION = 1
MANIFEST_VERSION = 1

_PLY_TYPES = {"double": "<f8", "float64": "<f8", "float": "<f4", "float32": "<f4",
              "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
              "short": "<i2", "ushort": "<u2", "int": "<i4", "int32": "<i4",
              "uint": "<u4", "uint32": "<u4"}


# ---------------------------------------------------------------------------
# PLY


def write_ply(path, fields: dict, comments=()):
    """Binary little-endian PLY with one ``vertex`` element of double properties."""
    names = list(fields)
    n = len(fields[names[0]]) if names else 0
    dtype = np.dtype([(k, "<f8") for k in names])
    data = np.empty(n, dtype=dtype)
    for k in names:
        data[k] = fields[k]
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {n}")
    header += [f"property double {k}" for k in names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(data.tobytes())


def read_ply(path):
    """Returns ``(fields, comments)`` for a binary little-endian vertex PLY."""
    raw = Path(path).read_bytes()
    pos = 0
    lines = []
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise ParseError(f"{path}: unterminated PLY header", pos)
        try:
            line = raw[pos:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError(f"{path}: non-ASCII PLY header", pos) from None
        lines.append((pos, line))
        pos = end + 1
        if line == "end_header":
            break
    if not lines or lines[0][1] != "ply":
        raise ParseError(f"{path}: missing 'ply' magic", 0)
    comments, props, count, fmt = [], [], None, None
    for off, line in lines[1:-1]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else None
        elif parts[0] == "comment":
            comments.append(line[len("comment"):].strip())
        elif parts[0] == "element":
            if len(parts) != 3 or parts[1] != "vertex" or count is not None:
                raise ParseError(f"{path}: only a single 'vertex' element is supported", off)
            try:
                count = int(parts[2])
            except ValueError:
                raise ParseError(f"{path}: bad element count", off) from None
        elif parts[0] == "property":
            if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                raise ParseError(f"{path}: unsupported property '{line}'", off)
            props.append((parts[2], _PLY_TYPES[parts[1]]))
        else:
            raise ParseError(f"{path}: unexpected header line '{line}'", off)
    if fmt != "binary_little_endian":
        raise ParseError(f"{path}: expected binary_little_endian format", lines[1][0])
    if count is None:
        raise ParseError(f"{path}: no vertex element", pos)
    dtype = np.dtype(props)
    need = count * dtype.itemsize
    if len(raw) - pos < need:
        raise ParseError(f"{path}: truncated body, expected {need} bytes of vertex data",
                         len(raw))
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return {name: data[name].astype(np.float64) for name, _ in props}, comments


# ---------------------------------------------------------------------------
# checkpoints


def _set_fields(s: GaussianSet) -> dict:
    f = {}
    for i, axis in enumerate("xyz"):
        f[axis] = s.positions[:, i]
    for i in range(4):
        f[f"rot_{i}"] = s.rotations[:, i]
    for i in range(3):
        f[f"scale_{i}"] = s.log_scales[:, i]
    f["opacity"] = s.opacity_logits
    for k in range(s.sh_rgb.shape[1]):
        for c in range(3):
            f[f"sh_rgb_{k}_{c}"] = s.sh_rgb[:, k, c]
    for k in range(s.sh_thermal.shape[1]):
        f[f"sh_thermal_{k}"] = s.sh_thermal[:, k, 0]
    if s.is_smoke:
        f["opacity_gap"] = s.opacity_gaps
        for i, name in enumerate(("t_appear", "width_appear", "span", "width_disappear")):
            f[f"temporal_{name}"] = s.temporal[:, i]
    return f


def _set_from_fields(kind: SetKind, f: dict, meta: dict, path) -> GaussianSet:
    try:
        n = len(f["x"])
        pos = np.stack([f["x"], f["y"], f["z"]], axis=1)
        rot = np.stack([f[f"rot_{i}"] for i in range(4)], axis=1)
        logs = np.stack([f[f"scale_{i}"] for i in range(3)], axis=1)
        op = f["opacity"]
        d_rgb, d_th = meta["sh_rgb_coeffs"], meta["sh_thermal_coeffs"]
        sh_rgb = np.zeros((n, d_rgb, 3))
        for k in range(d_rgb):
            for c in range(3):
                sh_rgb[:, k, c] = f[f"sh_rgb_{k}_{c}"]
        sh_th = np.zeros((n, d_th, 1))
        for k in range(d_th):
            sh_th[:, k, 0] = f[f"sh_thermal_{k}"]
    except KeyError as e:
        raise ParseError(f"{path}: missing property {e}") from None
    gaps = temporal = None
    if kind is SetKind.SMOKE:
        names = ("t_appear", "width_appear", "span", "width_disappear")
        if "opacity_gap" not in f or any(f"temporal_{k}" not in f for k in names):
            raise VersionError(f"{path}: smoke set lacks the temporal/opacity-gap block")
        gaps = f["opacity_gap"]
        temporal = np.stack([f[f"temporal_{k}"] for k in names], axis=1)
    return GaussianSet(kind=kind, positions=pos, rotations=rot, log_scales=logs,
                       opacity_logits=op, sh_rgb=sh_rgb, sh_thermal=sh_th,
                       scene_extent=float(meta.get("scene_extent", 1.0)),
                       opacity_gaps=gaps, temporal=temporal)


def save_checkpoint(sets, deform, path):
    """Write ``sets`` (list of GaussianSet) and an optional deformation field to
    directory ``path``: one PLY per set plus ``checkpoint.json``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(sets):
        fname = f"{i:02d}_{s.kind.value}.ply"
        write_ply(path / fname, _set_fields(s),
                  comments=[f"smokesplat {s.kind.value} v{CHECKPOINT_VERSION}"])
        entries.append(dict(kind=s.kind.value, file=fname, count=len(s),
                            scene_extent=s.scene_extent,
                            sh_rgb_coeffs=s.sh_rgb.shape[1],
                            sh_thermal_coeffs=s.sh_thermal.shape[1]))
    meta = {"format": "smokesplat-checkpoint", "version": CHECKPOINT_VERSION, "sets": entries,
            "deform": None}
    if deform is not None:
        meta["deform"] = dict(L_pos=deform.L_pos, L_time=deform.L_time,
                              weights=[dict(shape=list(w.shape), data=w.ravel().tolist())
                                       for w in deform.weights])
    tmp = path / "checkpoint.json.tmp"
    tmp.write_text(json.dumps(meta, indent=1))
    os.replace(tmp, path / "checkpoint.json")
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(sets, deform)``."""
    from ..deform import DeformationField

    path = Path(path)
    meta_path = path / "checkpoint.json"
    if not meta_path.exists():
        raise ParseError(f"{path}: no checkpoint.json")
    text = meta_path.read_text()
    try:
        meta = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{meta_path}: {e.msg}", e.pos) from None
    if meta.get("format") != "smokesplat-checkpoint":
        raise ParseError(f"{meta_path}: not a checkpoint sidecar", 0)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"{meta_path}: checkpoint version {meta.get('version')} "
                           f"!= supported {CHECKPOINT_VERSION}")
    sets = []
    for entry in meta["sets"]:
        kind = SetKind(entry["kind"])
        fields, _ = read_ply(path / entry["file"])
        if len(next(iter(fields.values()), [])) != entry["count"]:
            raise ParseError(f"{entry['file']}: vertex count disagrees with sidecar")
        sets.append(_set_from_fields(kind, fields, entry, path / entry["file"]))
    deform = None
    if meta.get("deform"):
        d = meta["deform"]
        weights = [np.asarray(w["data"], dtype=np.float64).reshape(w["shape"]) for w in d["weights"]]
        deform = DeformationField(weights=weights, L_pos=d["L_pos"], L_time=d["L_time"])
    return sets, deform


# ---------------------------------------------------------------------------
# images


def write_png(path, img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path)


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype != np.uint8:
        raise DatasetError(f"{path}: expected an 8-bit PNG")
    return arr.astype(np.float64) / 255.0


def write_pfm(path, arr):
    """Single-channel little-endian float32 PFM (rows stored bottom-up)."""
    arr = np.asarray(arr, dtype="<f4")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.flipud(arr).tobytes())


def read_pfm(path):
    raw = Path(path).read_bytes()
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+(-?[0-9.eE+-]+)\s", raw)
    if not m:
        raise ParseError(f"{path}: bad PFM header", 0)
    channels = 3 if m.group(1) == b"PF" else 1
    w, h, scale = int(m.group(2)), int(m.group(3)), float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    start = m.end()
    need = w * h * channels * 4
    if len(raw) - start < need:
        raise ParseError(f"{path}: truncated PFM body", len(raw))
    data = np.frombuffer(raw, dtype=dtype, count=w * h * channels, offset=start)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(data).astype(np.float64)


# ---------------------------------------------------------------------------
# dataset manifests


def frame_record(frame: FrameBundle, image: str, mask=None, depth=None, clear=None) -> dict:
    cam = frame.camera
    rec = dict(image=image, modality=cam.modality.value,
               intrinsics=dict(fx=cam.fx, fy=cam.fy, cx=cam.cx, cy=cam.cy,
                               width=cam.width, height=cam.height),
               pose=dict(rotation=cam.rotation.tolist(), translation=cam.translation.tolist()),
               time=frame.time, split=frame.split)
    if frame.name:
        rec["name"] = frame.name
    for key, val in (("mask", mask), ("depth", depth), ("clear", clear)):
        if val is not None:
            rec[key] = val
    return rec


def write_manifest(path, records, scene_aabb, points=None, extra=None):
    manifest = {"format": "smokesplat-dataset", "version": MANIFEST_VERSION,
                "scene_aabb": np.asarray(scene_aabb, dtype=float).tolist(), "frames": records}
    if points is not None:
        manifest["points"] = points
    if extra:
        manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=1))
    return Path(path)


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest {path} does not exist")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{path}: invalid JSON ({e.msg} at byte {e.pos})") from None
    if manifest.get("version") != MANIFEST_VERSION:
        raise VersionError(f"{path}: manifest version {manifest.get('version')} "
                           f"!= supported {MANIFEST_VERSION}")
    return manifest


def _load_frame(root: Path, i: int, rec: dict) -> FrameBundle:
    def asset(key):
        p = root / rec[key]
        if not p.exists():
            raise DatasetError(f"frame {i}: missing {key} file {p}")
        return p

    try:
        intr, pose = rec["intrinsics"], rec["pose"]
        modality = Modality(rec["modality"])
        rotation = np.asarray(pose["rotation"], dtype=np.float64)
        translation = np.asarray(pose["translation"], dtype=np.float64)
    except (KeyError, ValueError) as e:
        raise DatasetError(f"frame {i}: malformed record ({e})") from None
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
        raise DatasetError(f"frame {i}: non-finite pose")
    try:
        cam = Camera(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
                     width=intr["width"], height=intr["height"], rotation=rotation,
                     translation=translation, modality=modality)
    except (InvalidParameterError, KeyError, ValueError) as e:
        raise DatasetError(f"frame {i}: invalid camera ({e})") from None

    img = read_png(asset("image"))
    if img.ndim == 2:
        img = img[:, :, None]
    if modality is Modality.RGB and img.shape[2] == 4:
        img = img[:, :, :3]
    mask = depth = clear = None
    if rec.get("mask"):
        mask = read_png(asset("mask"))
        if mask.ndim == 3:
            mask = mask.mean(axis=2)
    if rec.get("depth"):
        depth = read_pfm(asset("depth"))
    if rec.get("clear"):
        clear = read_png(asset("clear"))
        if clear.ndim == 2:
            clear = clear[:, :, None]
    frame = FrameBundle(camera=cam, image=img, time=float(rec.get("time", 0.0)), mask=mask,
                        depth=depth, clear=clear, split=rec.get("split", "train"),
                        name=rec.get("name", f"frame{i:04d}"))
    try:
        frame.validate()
    except InvalidParameterError as e:
        raise DatasetError(f"frame {i}: {e}") from None
    return frame


def load_dataset(manifest_path):
    """Load and validate every frame listed in a dataset manifest."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    return [_load_frame(root, i, rec) for i, rec in enumerate(manifest.get("frames", []))]


def load_points(manifest_path):
    """Optional point hints (N, 3) named by the manifest, else None."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    if not manifest.get("points"):
        return None
    fields, _ = read_ply(manifest_path.parent / manifest["points"])
    return np.stack([fields["x"], fields["y"], fields["z"]], axis=1)


def scene_aabb(manifest_path):
    manifest = read_manifest(manifest_path)
    return np.asarray(manifest["scene_aabb"], dtype=np.float64)
