import numpy as np
import pytest

from citylens.core import SeededRng
from citylens.fusion import VisibilityParams, fuse_embeddings
from citylens.pipeline import embed_all_views
from citylens.providers import StubProvider
from citylens.synthetic import generate_city, segment_color_image
from citylens.views import CameraIntrinsics, CameraPose, filter_views, rasterize


class SmallScene:
    """A 120 m mini-city rendered from a handful of hand-placed views,
    segmented by color and embedded with the stub provider."""

    def __init__(self):
        self.rng = SeededRng(2024, "small-scene")
        self.city = generate_city(
            self.rng.child("city"),
            size=120.0,
            n_buildings=4,
            n_trees=6,
            ground_resolution=6.0,
            building_face_resolution=6.0,
        )
        self.points = self.city.point_cloud()
        self.intrinsics = CameraIntrinsics.from_fov(72, 72, 70.0)
        poses = [
            CameraPose((60.0, 60.0, 90.0), 0.0, 90.0),
            CameraPose((30.0, 30.0, 85.0), 45.0, 70.0),
            CameraPose((90.0, 40.0, 95.0), 160.0, 65.0),
            CameraPose((45.0, 95.0, 80.0), 280.0, 75.0),
        ]
        self.views = [rasterize(self.city.mesh, p, self.intrinsics, view_id=i) for i, p in enumerate(poses)]
        self.masks = []
        for view in self.views:
            self.masks.extend(segment_color_image(view.color, view.id))
        self.provider = StubProvider()
        self.params = VisibilityParams()
        self.embeddings = embed_all_views(self.views, self.masks, self.provider)
        self.store = fuse_embeddings(self.points, self.views, self.embeddings, self.params)


@pytest.fixture(scope="session")
def small_scene() -> SmallScene:
    return SmallScene()
