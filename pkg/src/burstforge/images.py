"""Lossless raster image reading and writing.

Images round through OpenCV: 8-bit and 16-bit PNG/TIFF/BMP are read into
float arrays scaled to [0, 1] (RGB channel order for color), and written
back with the requested bit depth. Lossy formats are deliberately not
offered; compression artifacts would contaminate synthetic ground truth.
"""

from __future__ import annotations

import os

import cv2
import numpy as np

RASTER_EXTENSIONS = (".png", ".tif", ".tiff", ".bmp")


def read_image(path: str) -> np.ndarray:
    """Read a raster file into a float64 array in [0, 1].

    Grayscale files give [H,W]; color files give [H,W,3] in RGB order
    (alpha, if present, is dropped).
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"could not read image file: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported raster dtype {raw.dtype} in {path}")
    data = raw.astype(np.float64) / scale
    if data.ndim == 3:
        # OpenCV loads BGR(A); reverse the first three channels to RGB.
        data = data[:, :, 2::-1]
    elif data.ndim != 2:
        raise ValueError(f"unsupported raster layout {raw.shape} in {path}")
    return data


def write_image(path: str, image: np.ndarray, bit_depth: int = 16) -> None:
    """Write a [0, 1] float array as an 8-bit or 16-bit raster file."""
    if bit_depth == 8:
        peak, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        peak, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected [H,W] or [H,W,3] image, got shape {arr.shape}")
    if arr.ndim == 3:
        if arr.shape[2] != 3:
            raise ValueError(f"color images need 3 channels, got {arr.shape[2]}")
        arr = arr[:, :, ::-1]  # RGB back to OpenCV's BGR
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * peak).astype(dtype)
    if not cv2.imwrite(str(path), quantized):
        raise ValueError(f"could not write image file: {path}")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Collapse [H,W,3] to [H,W] by channel mean; pass [H,W] through."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr.mean(axis=2)
    raise ValueError(f"expected [H,W] or [H,W,3] image, got shape {arr.shape}")


def list_rasters(directory: str) -> list:
    """Sorted raster file paths directly inside a directory."""
    names = sorted(
        name for name in os.listdir(directory)
        if name.lower().endswith(RASTER_EXTENSIONS)
    )
    return [os.path.join(directory, name) for name in names]
