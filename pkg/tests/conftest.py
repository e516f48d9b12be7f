import csv
import os

import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """Small APTOS-style dataset: 15 images (3 per grade) + manifest CSV.

    Images carry a class-dependent brightness and stripe pattern so a tiny
    model can actually separate them.
    """
    root = tmp_path_factory.mktemp("aptos_fixture")
    image_dir = root / "images"
    image_dir.mkdir()
    rng = np.random.default_rng(1234)
    rows = []
    for grade in range(5):
        for k in range(3):
            id_code = f"img_g{grade}_{k}"
            img = rng.integers(0, 60, size=(40, 48, 3), dtype=np.uint8)
            img[:, :, :] += np.uint8(30 * grade)
            img[grade * 7:grade * 7 + 5, :, :] = 230  # class-specific stripe
            Image.fromarray(img, mode="RGB").save(image_dir / f"{id_code}.png")
            rows.append((id_code, grade))
    csv_path = root / "train.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id_code", "diagnosis"])
        writer.writerows(rows)
    return {"csv": str(csv_path), "images": str(image_dir), "n": len(rows)}
