import numpy as np
import pytest

from lfsai.rig import CameraRig, linear_rig


@pytest.fixture
def canonical_rig() -> CameraRig:
    """5 cameras at x = 0, 0.1, ..., 0.4 m; f = 500 px; 640x480; identity rotations."""
    return linear_rig([0.0, 0.1, 0.2, 0.3, 0.4], fx=500.0, image_size=(640, 480))


@pytest.fixture
def small_rig() -> CameraRig:
    """Canonical geometry scaled down to a 64x48 image for fast tests."""
    return linear_rig([0.0, 0.1, 0.2, 0.3, 0.4], fx=500.0, image_size=(64, 48))


def random_rectified_rig(rng: np.random.Generator, image_size=(64, 48)) -> CameraRig:
    """Identity-rotation rig with random camera count and spacing."""
    k = int(rng.integers(2, 6))
    gaps = rng.uniform(0.05, 0.3, size=k - 1)
    spacings = np.concatenate([[0.0], np.cumsum(gaps)])
    fx = float(rng.uniform(200.0, 800.0))
    return linear_rig(spacings, fx=fx, image_size=image_size)


def random_rotated_rig(rng: np.random.Generator, image_size=(64, 48)) -> CameraRig:
    """Collinear rig with small random rotations on the non-reference cameras."""
    from scipy.spatial.transform import Rotation

    from lfsai.rig import Camera

    k = int(rng.integers(2, 6))
    gaps = rng.uniform(0.05, 0.3, size=k - 1)
    xs = np.concatenate([[0.0], np.cumsum(gaps)])
    fx = float(rng.uniform(300.0, 700.0))
    w, h = image_size
    cams = []
    for i, x in enumerate(xs):
        if i == 0:
            rot = np.eye(3)
        else:
            rotvec = rng.uniform(-0.02, 0.02, size=3)  # ~1 degree max
            rot = Rotation.from_rotvec(rotvec).as_matrix()
        center = np.array([x, 0.0, 0.0])
        cams.append(
            Camera(
                fx=fx,
                fy=fx,
                cx=w / 2.0,
                cy=h / 2.0,
                rotation=rot,
                translation=-rot @ center,
                image_size=image_size,
            )
        )
    return CameraRig(cameras=tuple(cams), reference_index=0, unit_baseline=float(xs[1]))
