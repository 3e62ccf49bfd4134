#!/usr/bin/env python3
"""Regenerates tests/data/natural: 64x64 RGB crops of the scikit-image sample photos.

Each crop is a 128x128 window area-downsampled to 64x64. Positions are fixed so
the fixture set is reproducible.
"""
import os
import sys

import numpy as np
import skimage
from skimage import io, transform

SOURCES = [
    "astronaut.png", "chelsea.png", "coffee.png", "rocket.jpg",
    "motorcycle_left.png", "ihc.png", "retina.jpg", "hubble_deep_field.jpg",
]
CROPS_PER_SOURCE = 3


def main(out_dir):
    data_dir = os.path.join(os.path.dirname(skimage.__file__), "data")
    rng = np.random.default_rng(20211017)
    os.makedirs(out_dir, exist_ok=True)
    index = 0
    for name in SOURCES:
        img = io.imread(os.path.join(data_dir, name))
        if img.ndim == 2:
            img = np.stack([img] * 3, axis=-1)
        img = img[..., :3]
        h, w = img.shape[:2]
        for _ in range(CROPS_PER_SOURCE):
            side = min(128 * 2 if min(h, w) > 900 else 128, h, w)
            y = int(rng.integers(0, h - side + 1))
            x = int(rng.integers(0, w - side + 1))
            crop = img[y:y + side, x:x + side].astype(np.float64) / 255.0
            small = transform.resize(crop, (64, 64), anti_aliasing=True)
            out = np.clip(np.round(small * 255.0), 0, 255).astype(np.uint8)
            io.imsave(os.path.join(out_dir, f"img_{index:02d}.png"), out, check_contrast=False)
            index += 1
    print(f"wrote {index} images to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/data/natural")
