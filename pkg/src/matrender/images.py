"""Image file I/O: HDR environment maps, EXR buffers and PNG outputs."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
import OpenEXR

GAMMA = 2.2
HDR_SUFFIXES = (".hdr", ".exr")


def _exr_header():
    return {"compression": OpenEXR.ZIP_COMPRESSION, "type": OpenEXR.scanlineimage}


def write_exr(path, image: np.ndarray) -> None:
    """Write a float image as EXR: (H, W) goes to a single Z channel, (H, W, 3) to RGB."""
    img = np.ascontiguousarray(image, dtype=np.float32)
    if img.ndim == 2:
        channels = {"Z": img}
    elif img.ndim == 3 and img.shape[2] == 3:
        channels = {"RGB": img}
    else:
        raise ValueError(f"cannot write image of shape {img.shape} as EXR")
    OpenEXR.File(_exr_header(), channels).write(str(path))


def read_exr(path) -> np.ndarray:
    """Read an EXR as float64: RGB images as (H, W, 3), single channels as (H, W)."""
    with OpenEXR.File(str(path)) as f:
        ch = {k: np.asarray(v.pixels) for k, v in f.channels().items()}
    if "RGB" in ch:
        return ch["RGB"].astype(np.float64)
    if "RGBA" in ch:
        return ch["RGBA"][..., :3].astype(np.float64)
    if all(c in ch for c in "RGB"):
        return np.stack([ch["R"], ch["G"], ch["B"]], axis=-1).astype(np.float64)
    if len(ch) == 1:
        return next(iter(ch.values())).astype(np.float64)
    raise ValueError(f"{path}: unrecognised EXR channel layout {sorted(ch)}")


def read_hdr_image(path) -> np.ndarray:
    """Linear rgb radiance (H, W, 3) from a Radiance .hdr or an .exr file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    ext = path.suffix.lower()
    if ext not in HDR_SUFFIXES:
        raise ValueError(f"{path.name}: expected an HDR image (.hdr or .exr), got {ext or 'no extension'}")
    if ext == ".exr":
        img = read_exr(path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        return img
    img = cv2.imread(str(path), cv2.IMREAD_ANYDEPTH | cv2.IMREAD_COLOR)
    if img is None:
        raise ValueError(f"{path}: could not decode Radiance HDR")
    if img.dtype != np.float32:
        raise ValueError(f"{path}: decoded as low dynamic range ({img.dtype})")
    return img[..., ::-1].astype(np.float64)


def write_hdr(path, image: np.ndarray) -> None:
    path = Path(path)
    img = np.asarray(image, dtype=np.float32)
    if path.suffix.lower() == ".exr":
        write_exr(path, img)
    elif not cv2.imwrite(str(path), np.ascontiguousarray(img[..., ::-1])):
        raise OSError(f"failed to write {path}")


def tonemap(radiance: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and apply the fixed display gamma."""
    return np.clip(radiance, 0.0, 1.0) ** (1.0 / GAMMA)


def write_png16(path, radiance: np.ndarray) -> None:
    """Tone-mapped 16-bit rgb PNG."""
    q = np.round(tonemap(radiance) * 65535.0).astype(np.uint16)
    if not cv2.imwrite(str(path), np.ascontiguousarray(q[..., ::-1])):
        raise OSError(f"failed to write {path}")


def write_mask_png(path, mask: np.ndarray) -> None:
    if not cv2.imwrite(str(path), np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)):
        raise OSError(f"failed to write {path}")


def read_image(path) -> np.ndarray:
    """Read a PNG (8 or 16 bit) or EXR as float rgb/grayscale in display units.

    Integer images are scaled to [0, 1]; EXR values are returned unchanged.
    """
    path = Path(path)
    if path.suffix.lower() == ".exr":
        return read_exr(path)
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise ValueError(f"could not read image {path}")
    scale = float(np.iinfo(img.dtype).max) if np.issubdtype(img.dtype, np.integer) else 1.0
    img = img.astype(np.float64) / scale
    if img.ndim == 3:
        img = img[..., 2::-1] if img.shape[2] >= 3 else img[..., 0]
    return img
