import numpy as np
import pytest
from PIL import Image

from dice_export.model import build_model

ACCEPTANCE_LOG: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LOG.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LOG:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LOG:
        status = "PASS" if passed else "FAIL"
        color = {"green": True} if passed else {"red": True}
        terminalreporter.write_line(f"  {status}  {name}: {detail}", **color)


@pytest.fixture(scope="session")
def dev_model():
    return build_model("dev-16-240-small")


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.2 * np.sin(xx / 9.0) * np.cos(yy / 7.0)
    img = np.clip(base[..., None] + rng.normal(0, 0.05, (h, w, 3)), 0, 1)
    return (img * 255).astype(np.uint8)


def _blob_mask(h: int, w: int, cy: int, cx: int, r: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.uint8) * 255


@pytest.fixture(scope="session")
def sample_dir(tmp_path_factory):
    """Five images exercising the folder conventions and odd input sizes.

    s0: plain 240x240                      -> label 0, no pseudo
    s1: 240x240 with gt + corrupt + patch-resolution mask
    s2: 300x300 with gt (needs standardizing)
    s3: 180x320 with corrupt + pixel-resolution mask
    s4: plain 240x240, duplicate content of s0
    """
    root = tmp_path_factory.mktemp("samples")
    rng = np.random.default_rng(7)

    def save(name, arr):
        Image.fromarray(arr).save(root / name)

    base240 = _texture(rng, 240, 240)
    save("s0.ppm", base240)
    save("s4.ppm", base240.copy())

    img1 = _texture(rng, 240, 240)
    save("s1.ppm", img1)
    save("s1_gt.pgm", _blob_mask(240, 240, 60, 80, 30))
    corrupt1 = img1.copy()
    corrupt1[32:96, 48:112] = 255 - corrupt1[32:96, 48:112]
    save("s1_corrupt.ppm", corrupt1)
    patch_mask = np.zeros((15, 15), dtype=np.uint8)
    patch_mask[2:6, 3:7] = 255
    save("s1_mask_patch.pgm", patch_mask)

    save("s2.png", _texture(rng, 300, 300))
    save("s2_gt.png", _blob_mask(300, 300, 150, 150, 40))

    img3 = _texture(rng, 180, 320)
    save("s3.ppm", img3)
    corrupt3 = img3.copy()
    corrupt3[50:90, 100:160] = 0
    save("s3_corrupt.ppm", corrupt3)
    save("s3_mask.pgm", _blob_mask(180, 320, 70, 130, 35))

    return root
