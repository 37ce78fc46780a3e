"""
Clip directories: numbered PNG frames plus a JSON sidecar.

    <dir>/frame_0000.png ...   RGB frames
    <dir>/clip.json            sizes, boxes, generator metadata
    <dir>/masks.vfst           int32 label maps (T, H, W)
    <dir>/flow.vfst            int32 correspondence to frame 0 (T, H, W, 2)
"""

import json
import os
from typing import List

import numpy as np
from PIL import Image

from .errors import FormatError
from .synthetic import VideoClip
from .tensor_io import load_tensor, save_tensor

FRAME_PATTERN = "frame_{:04d}.png"
SIDECAR = "clip.json"


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(frame) * 255.0), 0, 255).astype(np.uint8)


def write_png(path: str, frame: np.ndarray) -> None:
    """Write an H x W x 3 float raster or an H x W uint8 map."""
    array = np.asarray(frame)
    if array.dtype != np.uint8:
        array = to_uint8(array)
    Image.fromarray(array).save(path)


def read_png(path: str) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0


def save_clip(clip: VideoClip, out_dir: str) -> List[str]:
    """Write a clip directory and return the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for t in range(clip.num_frames):
        path = os.path.join(out_dir, FRAME_PATTERN.format(t))
        write_png(path, clip.frames[t])
        written.append(path)

    save_tensor(os.path.join(out_dir, "masks.vfst"), clip.gt_masks.astype(np.int32))
    save_tensor(os.path.join(out_dir, "flow.vfst"), clip.gt_flow.astype(np.int32))
    sidecar = {
        "video_id": int(clip.video_id),
        "seed": int(clip.seed),
        "num_frames": clip.num_frames,
        "height": clip.height,
        "width": clip.width,
        "num_objects": int(clip.num_objects),
        "frame_pattern": FRAME_PATTERN,
        "masks_file": "masks.vfst",
        "flow_file": "flow.vfst",
        "boxes": clip.gt_boxes.tolist(),
        "metadata": clip.metadata,
    }
    sidecar_path = os.path.join(out_dir, SIDECAR)
    with open(sidecar_path, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2)
    written += [os.path.join(out_dir, "masks.vfst"), os.path.join(out_dir, "flow.vfst"), sidecar_path]
    return written


def load_clip(clip_dir: str) -> VideoClip:
    """Read a clip directory written by `save_clip`."""
    sidecar_path = os.path.join(clip_dir, SIDECAR)
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except FileNotFoundError as exc:
        raise FormatError(f"{sidecar_path} not found") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"cannot parse {sidecar_path}: {exc}", exc.pos) from exc

    pattern = sidecar.get("frame_pattern", FRAME_PATTERN)
    frames = np.stack([read_png(os.path.join(clip_dir, pattern.format(t)))
                       for t in range(sidecar["num_frames"])])
    masks = load_tensor(os.path.join(clip_dir, sidecar.get("masks_file", "masks.vfst")))
    flow = load_tensor(os.path.join(clip_dir, sidecar.get("flow_file", "flow.vfst")))
    boxes = np.asarray(sidecar["boxes"], dtype=np.float64).reshape(sidecar["num_frames"], sidecar["num_objects"], 4)
    if frames.shape[1:3] != (sidecar["height"], sidecar["width"]):
        raise FormatError(f"frames in {clip_dir} do not match the declared size")
    return VideoClip(frames=frames, gt_masks=masks, gt_boxes=boxes, gt_flow=flow,
                     num_objects=int(sidecar["num_objects"]), video_id=int(sidecar.get("video_id", 0)),
                     seed=int(sidecar.get("seed", 0)), metadata=sidecar.get("metadata", {}))
