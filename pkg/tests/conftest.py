import numpy as np
import pytest

from core.geometry import Camera, Intrinsics, Pose
from core.scene_io import ViewRecord
from core.synthetic import Checker, Plane, SceneSpec, render_analytic


@pytest.fixture
def make_camera():
    """Factory: pinhole camera with square pixels, principal point at the center by default."""

    def factory(width=32, height=24, f=30.0, cx=None, cy=None, rotation=None, center=(0.0, 0.0, 0.0)):
        intrinsics = Intrinsics(f, f, width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                                width, height)
        rotation = np.eye(3) if rotation is None else rotation
        return Camera(intrinsics, Pose.from_center(rotation, center))

    return factory


@pytest.fixture
def make_view():
    """Factory: ViewRecord from a camera plus optional rasters (defaults: gray, depth 2, confidence 1)."""

    def factory(camera, depth=2.0, image=None, confidence=None, view_id="v000"):
        h, w = camera.shape
        depth = np.full((h, w), float(depth)) if np.isscalar(depth) else np.asarray(depth, dtype=np.float64)
        image = np.full((h, w, 3), 0.5) if image is None else image
        confidence = np.ones((h, w)) if confidence is None else confidence
        return ViewRecord(view_id, image, depth, confidence, camera)

    return factory


@pytest.fixture
def plane_scene():
    """Fronto-parallel textured plane at z = 2."""
    texture = Checker(period=0.2, color_a=(0.8, 0.6, 0.2), color_b=(0.2, 0.4, 0.7))
    return SceneSpec(primitives=(Plane(center=(0.0, 0.0, 2.0), normal=(0.0, 0.0, -1.0), texture=texture),), seed=3)


@pytest.fixture
def render(plane_scene):
    """Factory: analytic render of ``scene`` (the plane scene by default)."""

    def factory(camera, scene=None, view_index=0, view_id=None):
        return render_analytic(scene or plane_scene, camera, view_index, view_id)[0]

    return factory
