"""Image file I/O: 8/16-bit PNG, JPEG, and a minimal float EXR codec.

PNG and JPEG go through OpenCV (with the BGR/RGB swap handled here). The EXR
path is a self-contained OpenEXR v2 writer/reader for single-part,
uncompressed, float32 scanline images, which keeps float round trips bitwise
exact without a native OpenEXR dependency.
"""

import struct
from pathlib import Path

import cv2
import numpy as np
import torch
import torch.nn.functional as F

_EXR_MAGIC = 20000630
_EXR_VERSION = 2
_PT_FLOAT = 2


def load_image(path: str | Path) -> torch.Tensor:
    """Loads PNG (8/16-bit) or JPEG into a (3, H, W) float32 tensor in [0, 1]."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise IOError(f"could not read image file: {path}")
    if data.ndim == 2:
        data = data[:, :, None].repeat(3, axis=2)
    if data.shape[2] == 4:
        data = data[:, :, :3]
    data = data[:, :, ::-1]  # BGR -> RGB
    if data.dtype == np.uint8:
        arr = data.astype(np.float32) / 255.0
    elif data.dtype == np.uint16:
        arr = data.astype(np.float32) / 65535.0
    else:
        arr = data.astype(np.float32)
    return torch.from_numpy(np.ascontiguousarray(arr)).permute(2, 0, 1)


def _to_hwc(array) -> np.ndarray:
    arr = array.detach().cpu().numpy() if torch.is_tensor(array) else np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_png8(path: str | Path, array) -> None:
    """Writes [0,1] floats (H, W) or (H, W, C) as 8-bit PNG."""
    arr = _to_hwc(array)
    quant = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    _write_cv(path, quant)


def save_png16(path: str | Path, array) -> None:
    """Writes [0,1] floats as 16-bit PNG."""
    arr = _to_hwc(array)
    quant = np.clip(np.rint(arr * 65535.0), 0, 65535).astype(np.uint16)
    _write_cv(path, quant)


def _write_cv(path, quant: np.ndarray) -> None:
    if quant.shape[2] == 1:
        out = quant[:, :, 0]
    elif quant.shape[2] == 3:
        out = quant[:, :, ::-1]  # RGB -> BGR
    else:
        raise ValueError(f"unsupported channel count {quant.shape[2]}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), out):
        raise IOError(f"failed to write image: {path}")


def resize_image(image: torch.Tensor, size_hw: tuple[int, int]) -> torch.Tensor:
    """Bilinear (antialiased) resize of a (3, H, W) tensor."""
    if image.shape[-2:] == tuple(size_hw):
        return image
    return F.interpolate(image[None], size=tuple(size_hw), mode="bilinear", antialias=True)[0]


# ----------------------------------------------------------------------------
# Minimal OpenEXR v2: single part, scanline, no compression, float32 channels.
# ----------------------------------------------------------------------------


def _attr(name: str, type_name: str, payload: bytes) -> bytes:
    return name.encode() + b"\0" + type_name.encode() + b"\0" + struct.pack("<i", len(payload)) + payload


def write_exr(path: str | Path, array, channel_names: list[str] | None = None) -> None:
    """Writes (H, W) or (H, W, C) float32 data as an uncompressed EXR.

    Default channel names: R,G,B for 3 channels, Y for 1. Channels are stored
    alphabetically as the format requires.
    """
    arr = _to_hwc(array).astype(np.float32)
    h, w, c = arr.shape
    if channel_names is None:
        channel_names = {1: ["Y"], 3: ["R", "G", "B"]}.get(c)
        if channel_names is None:
            raise ValueError(f"channel_names required for {c} channels")
    if len(channel_names) != c:
        raise ValueError("channel_names length must match channel count")

    order = sorted(range(c), key=lambda i: channel_names[i])
    chlist = b""
    for i in order:
        chlist += channel_names[i].encode() + b"\0"
        chlist += struct.pack("<iBBBBii", _PT_FLOAT, 0, 0, 0, 0, 1, 1)
    chlist += b"\0"

    header = b""
    header += _attr("channels", "chlist", chlist)
    header += _attr("compression", "compression", struct.pack("<B", 0))
    box = struct.pack("<iiii", 0, 0, w - 1, h - 1)
    header += _attr("dataWindow", "box2i", box)
    header += _attr("displayWindow", "box2i", box)
    header += _attr("lineOrder", "lineOrder", struct.pack("<B", 0))
    header += _attr("pixelAspectRatio", "float", struct.pack("<f", 1.0))
    header += _attr("screenWindowCenter", "v2f", struct.pack("<ff", 0.0, 0.0))
    header += _attr("screenWindowWidth", "float", struct.pack("<f", 1.0))
    header += b"\0"

    preamble = struct.pack("<ii", _EXR_MAGIC, _EXR_VERSION) + header
    table_start = len(preamble)
    data_start = table_start + 8 * h
    row_bytes = 8 + c * w * 4  # y + size prefix, then all channels' rows
    offsets = [data_start + y * row_bytes for y in range(h)]

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(preamble)
        fh.write(struct.pack(f"<{h}Q", *offsets))
        for y in range(h):
            fh.write(struct.pack("<ii", y, c * w * 4))
            for i in order:
                fh.write(arr[y, :, i].tobytes())


def read_exr(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Reads an EXR written by :func:`write_exr` (uncompressed float scanlines).

    Returns (H, W, C) float32 data and the channel names in storage order.
    """
    blob = Path(path).read_bytes()
    magic, version = struct.unpack_from("<ii", blob, 0)
    if magic != _EXR_MAGIC:
        raise ValueError(f"not an EXR file: {path}")
    if version & 0xFF != 2 or version & ~0xFF:
        raise ValueError(f"unsupported EXR version/flags: {version:#x}")
    pos = 8

    def read_cstr(p: int) -> tuple[str, int]:
        end = blob.index(b"\0", p)
        return blob[p:end].decode(), end + 1

    attrs: dict[str, tuple[str, bytes]] = {}
    while True:
        if blob[pos] == 0:
            pos += 1
            break
        name, pos = read_cstr(pos)
        type_name, pos = read_cstr(pos)
        (size,) = struct.unpack_from("<i", blob, pos)
        pos += 4
        attrs[name] = (type_name, blob[pos : pos + size])
        pos += size

    (compression,) = struct.unpack_from("<B", attrs["compression"][1], 0)
    if compression != 0:
        raise ValueError("only uncompressed EXR is supported")
    x0, y0, x1, y1 = struct.unpack_from("<iiii", attrs["dataWindow"][1], 0)
    w, h = x1 - x0 + 1, y1 - y0 + 1

    names = []
    ch = attrs["channels"][1]
    cpos = 0
    while ch[cpos] != 0:
        name_end = ch.index(b"\0", cpos)
        names.append(ch[cpos:name_end].decode())
        (ptype,) = struct.unpack_from("<i", ch, name_end + 1)
        if ptype != _PT_FLOAT:
            raise ValueError("only float32 channels are supported")
        cpos = name_end + 1 + 16
    c = len(names)

    pos += 8 * h  # skip offset table; blocks follow in line order
    out = np.empty((h, w, c), dtype=np.float32)
    for _ in range(h):
        y, size = struct.unpack_from("<ii", blob, pos)
        pos += 8
        if size != c * w * 4:
            raise ValueError("unexpected scanline size")
        row = np.frombuffer(blob, dtype="<f4", count=c * w, offset=pos).reshape(c, w)
        out[y - y0] = row.T
        pos += size
    return out, names
