import csv
from pathlib import Path

import numpy as np
import pytest


@pytest.fixture(scope="session")
def iris_csv(tmp_path_factory) -> Path:
    from sklearn.datasets import load_iris

    ds = load_iris()
    path = tmp_path_factory.mktemp("data") / "iris.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*ds.feature_names, "species"])
        for row, label in zip(ds.data, ds.target):
            writer.writerow([*row, ds.target_names[label]])
    return path


@pytest.fixture(scope="session")
def breast_cancer_csv(tmp_path_factory) -> Path:
    from sklearn.datasets import load_breast_cancer

    ds = load_breast_cancer()
    path = tmp_path_factory.mktemp("data") / "breast_cancer.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*(f"f{i}" for i in range(ds.data.shape[1])), "diagnosis"])
        for row, label in zip(ds.data, ds.target):
            writer.writerow([*row, ds.target_names[label]])
    return path


def write_idx_pair(dirpath: Path, images: np.ndarray, labels: np.ndarray,
                   stem: str) -> tuple[Path, Path]:
    """Materialize a standard big-endian IDX image/label pair."""
    import struct

    n, rows, cols = images.shape
    img_path = dirpath / f"{stem}-images-idx3-ubyte"
    lbl_path = dirpath / f"{stem}-labels-idx1-ubyte"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        fh.write(images.astype(np.uint8).tobytes())
    with open(lbl_path, "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels.astype(np.uint8).tobytes())
    return img_path, lbl_path


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """The bundled 8x8 digit images as real IDX files (image-path fixture)."""
    from sklearn.datasets import load_digits

    ds = load_digits()
    images = np.clip(ds.images * 255.0 / 16.0, 0, 255)
    path = tmp_path_factory.mktemp("idx")
    return write_idx_pair(path, images, ds.target, "digits")
