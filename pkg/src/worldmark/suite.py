"""Image suite: metadata sidecars and a synthetic placeholder suite.

Each image ``name.<ext>`` sits next to ``name.json`` holding
``{"viewpoint": "first"|"third", "style": "real"|"stylized",
"scene": "nature"|"city"|"indoor"}``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

VIEWPOINTS = ("first", "third")
STYLES = ("real", "stylized")
SCENES = ("nature", "city", "indoor")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp", ".bmp")


class ImageSuiteError(ValueError):
    pass


@dataclass(frozen=True)
class ImageEntry:
    name: str
    path: str
    viewpoint: str
    style: str
    scene: str

    def to_dict(self) -> dict:
        return {"name": self.name, "path": self.path, "viewpoint": self.viewpoint,
                "style": self.style, "scene": self.scene}

    def matches(self, viewpoint=None, style=None, scene=None) -> bool:
        return ((viewpoint is None or self.viewpoint == viewpoint)
                and (style is None or self.style == style)
                and (scene is None or self.scene == scene))


def load_image_suite(image_dir: str | os.PathLike) -> list[ImageEntry]:
    d = Path(image_dir)
    images = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise ImageSuiteError(f"no images in {d}")
    entries = []
    for img in images:
        sidecar = img.with_suffix(".json")
        if not sidecar.exists():
            raise ImageSuiteError(f"missing metadata sidecar {sidecar.name} for {img.name}")
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
        for key, allowed in (("viewpoint", VIEWPOINTS), ("style", STYLES), ("scene", SCENES)):
            if meta.get(key) not in allowed:
                raise ImageSuiteError(f"{sidecar.name}: {key} must be one of {allowed}, got {meta.get(key)!r}")
        entries.append(ImageEntry(img.stem, str(img.resolve()), meta["viewpoint"], meta["style"], meta["scene"]))
    return entries


_SCENE_TINT = {"nature": (60, 140, 70), "city": (120, 120, 135), "indoor": (150, 110, 80)}


def _placeholder(scene: str, style: str, viewpoint: str, rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array(_SCENE_TINT[scene], dtype=float)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((size, size, 3))
    for c in range(3):
        img[..., c] = base[c] * (0.6 + 0.4 * yy) + 30 * np.sin(6 * xx + rng.uniform(0, 6))
    if style == "stylized":
        img = np.round(img / 48) * 48  # posterized
    if viewpoint == "third":
        cy, cx = size * 0.65, size * 0.5
        body = ((yy * size - cy) / (size * 0.18)) ** 2 + ((xx * size - cx) / (size * 0.07)) ** 2 < 1
        img[body] = (230, 200, 40)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_synthetic_suite(out_dir: str | os.PathLike, n_scenes: int = 50, seed: int = 0,
                             size: int = 64) -> list[ImageEntry]:
    """Write ``n_scenes`` scenes × {first, third} tiny images with sidecars.

    Half the scenes are real, half stylized; scene categories cycle through
    nature, city, indoor.
    """
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_scenes):
        style = STYLES[0] if i < (n_scenes + 1) // 2 else STYLES[1]
        scene = SCENES[i % len(SCENES)]
        for view in VIEWPOINTS:
            name = f"scene{i:03d}_{view}"
            Image.fromarray(_placeholder(scene, style, view, rng, size)).save(out / f"{name}.png")
            meta = {"viewpoint": view, "style": style, "scene": scene}
            (out / f"{name}.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return load_image_suite(out)
