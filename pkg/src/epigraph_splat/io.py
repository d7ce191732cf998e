"""Readers and writers for the text scene formats, PLY, feature dumps and images.

Cameras file, one camera per line (``#`` starts a comment)::

    id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3

Matches file, one correspondence per line::

    view_a u1 v1 view_b u2 v2

All writes go to a temporary file in the destination directory and are
renamed into place.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from io import BytesIO
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .epipolar import CameraIntrinsics, CameraPose, CameraView, Correspondence
from .errors import ContractError, EpigraphError, ImageReadError, ParseError, SemanticError

CAMERA_FIELDS = 19
MATCH_FIELDS = 6
DUMP_HEADER = struct.Struct("<QQ")

_UMASK = os.umask(0)
os.umask(_UMASK)


@dataclass
class SceneBundle:
    views: list[CameraView]
    correspondences: list[Correspondence]
    images: dict[str, Path] = field(default_factory=dict)

    @property
    def view_table(self) -> dict[str, CameraView]:
        return {v.id: v for v in self.views}


def _tokens(line: str):
    """Yield ``(column, token)`` pairs with 1-based columns, stopping at ``#``."""
    text = line.split("#", 1)[0]
    col = 0
    for tok in text.split():
        col = text.index(tok, col)
        yield col + 1, tok
        col += len(tok)


def _records(path, expected: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            toks = list(_tokens(line))
            if not toks:
                continue
            if len(toks) != expected:
                col = toks[expected][0] if len(toks) > expected else len(line.rstrip("\n")) + 1
                raise ParseError(path, lineno, col, f"expected {expected} fields, found {len(toks)}")
            yield lineno, toks


def _float(path, lineno, col, tok) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(path, lineno, col, f"not a number: {tok!r}") from None
    if not np.isfinite(value):
        raise ParseError(path, lineno, col, f"non-finite value {tok!r}")
    return value


def _int(path, lineno, col, tok) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, lineno, col, f"not an integer: {tok!r}") from None


def parse_cameras(path) -> list[CameraView]:
    views: list[CameraView] = []
    seen = set()
    for lineno, toks in _records(path, CAMERA_FIELDS):
        vid = toks[0][1]
        if vid in seen:
            raise SemanticError(f"{path}:{lineno}: duplicate view id {vid!r}")
        seen.add(vid)
        fx, fy, cx, cy = (_float(path, lineno, c, t) for c, t in toks[1:5])
        w, h = (_int(path, lineno, c, t) for c, t in toks[5:7])
        nums = [_float(path, lineno, c, t) for c, t in toks[7:]]
        try:
            view = CameraView(
                id=vid,
                intrinsics=CameraIntrinsics(fx, fy, cx, cy),
                pose=CameraPose(np.array(nums[:9]).reshape(3, 3), np.array(nums[9:])),
                width=w,
                height=h,
            )
        except EpigraphError as exc:
            raise SemanticError(f"{path}:{lineno}: view {vid!r}: {exc}") from exc
        views.append(view)
    return views


def parse_matches(path, views: dict[str, CameraView]) -> list[Correspondence]:
    out = []
    for lineno, toks in _records(path, MATCH_FIELDS):
        va, vb = toks[0][1], toks[3][1]
        for vid in (va, vb):
            if vid not in views:
                raise SemanticError(f"{path}:{lineno}: unknown view id {vid!r}")
        u1, v1 = (_float(path, lineno, c, t) for c, t in toks[1:3])
        u2, v2 = (_float(path, lineno, c, t) for c, t in toks[4:6])
        if not views[va].contains((u1, v1)) or not views[vb].contains((u2, v2)):
            raise SemanticError(f"{path}:{lineno}: pixel outside image bounds")
        out.append(Correspondence(va, (u1, v1), vb, (u2, v2)))
    return out


def parse_scene(camera_path, matches_path) -> SceneBundle:
    views = parse_cameras(camera_path)
    table = {v.id: v for v in views}
    return SceneBundle(views, parse_matches(matches_path, table))


def format_cameras(views) -> str:
    lines = ["# id fx fy cx cy width height r11 r12 r13 r21 r22 r23 r31 r32 r33 t1 t2 t3"]
    for v in views:
        k = v.intrinsics
        if k.skew != 0.0:
            raise ContractError("the camera text format cannot represent skew")
        nums = [k.fx, k.fy, k.cx, k.cy]
        rest = list(v.pose.R.ravel()) + list(v.pose.t)
        lines.append(
            " ".join([str(v.id)] + [repr(float(x)) for x in nums] + [str(v.width), str(v.height)]
                     + [repr(float(x)) for x in rest])
        )
    return "\n".join(lines) + "\n"


def format_matches(correspondences) -> str:
    lines = ["# view_a u1 v1 view_b u2 v2"]
    for c in correspondences:
        lines.append(
            f"{c.view_a} {c.x1[0]!r} {c.x1[1]!r} {c.view_b} {c.x2[0]!r} {c.x2[1]!r}"
        )
    return "\n".join(lines) + "\n"


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o666 & ~_UMASK)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps_json(obj))


def format_ply(positions, rmse) -> str:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    rmse = np.asarray(rmse, dtype=np.float64).reshape(-1)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(positions)}",
        "property double x",
        "property double y",
        "property double z",
        "property double rmse",
        "end_header",
    ]
    body = [" ".join(repr(float(v)) for v in (*p, r)) for p, r in zip(positions, rmse)]
    return "\n".join(header + body) + "\n"


def write_ply(path, positions, rmse):
    atomic_write(path, format_ply(positions, rmse))


def read_ply(path) -> np.ndarray:
    """Vertex table (N, 4) of an ASCII PLY written by :func:`write_ply`."""
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    end = lines.index("end_header")
    count = next(int(l.split()[2]) for l in lines[:end] if l.startswith("element vertex"))
    rows = [list(map(float, l.split())) for l in lines[end + 1 : end + 1 + count]]
    return np.array(rows, dtype=np.float64).reshape(count, 4)


def encode_feature_dump(values) -> bytes:
    """16-byte header (uint64 LE rows, cols) followed by row-major float64 LE values."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ContractError("feature dump expects a 2D array")
    M, D = values.shape
    return DUMP_HEADER.pack(M, D) + np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode_feature_dump(data: bytes) -> np.ndarray:
    M, D = DUMP_HEADER.unpack_from(data)
    payload = data[DUMP_HEADER.size :]
    if len(payload) != M * D * 8:
        raise ContractError(f"feature dump payload has {len(payload)} bytes, expected {M * D * 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(M, D).astype(np.float64)


def load_image(path) -> np.ndarray:
    """8-bit grayscale or RGB image as float64 in [0, 1], shape (H, W, C)."""
    try:
        with PILImage.open(path) as im:
            if im.mode == "P":
                im = im.convert("RGB")
            elif im.mode == "LA":
                im = im.convert("L")
            elif im.mode == "RGBA":
                im = im.convert("RGB")
            if im.mode not in ("L", "RGB"):
                raise ContractError(f"{path}: unsupported image mode {im.mode!r}")
            data = np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc
    if data.ndim == 2:
        data = data[..., None]
    return data.astype(np.float64) / 255.0


def save_image(path, data):
    """Write an (H, W) / (H, W, 1) / (H, W, 3) array in [0, 1] as 8-bit PNG or PPM/PGM."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[..., 0]
    img = PILImage.fromarray(np.round(np.clip(a, 0, 1) * 255).astype(np.uint8))
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM"}.get(path.suffix.lower(), "PNG")
    buf = BytesIO()
    img.save(buf, format=fmt)
    atomic_write(path, buf.getvalue())


def read_scales(path) -> np.ndarray:
    rows = []
    for lineno, toks in _records(path, 3):
        rows.append([_float(path, lineno, c, t) for c, t in toks])
    return np.array(rows, dtype=np.float64).reshape(-1, 3)
