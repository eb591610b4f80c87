"""Built-in scene descriptions (in the scene file format)."""

from __future__ import annotations

import dataclasses

from .config import SceneSpec, scene_spec_from_text

DEFAULT_SCENE = """\
# mixed scene on the default 32 x 32 x 8 grid (8 m x 8 m x 2 m)
n_classes = 4
object = box large 2.0 2.0 0.75 1.0 0.75 0.75 1 0.85 0.25 0.2
object = sphere large 6.0 5.75 0.9 0.9 0.9 0.9 2 0.2 0.55 0.85
object = box small 5.75 2.0 0.25 0.25 0.25 0.25 3 0.95 0.85 0.2
object = box small 2.25 6.0 0.25 0.25 0.25 0.25 3 0.95 0.85 0.2
object = sphere small 4.5 6.5 0.3 0.3 0.3 0.3 4 0.3 0.8 0.3
"""

SMALL_SCENE = """\
# dominated by single-voxel targets standing on a ground plane
n_classes = 4
ground_plane = true
ground_class = 4
object = box large 5.0 5.0 0.75 0.75 0.75 0.5 1 0.85 0.25 0.2
object = box small 1.307 2.289 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 5.958 4.534 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 1.362 3.565 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 3.864 1.788 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 5.525 1.489 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 3.293 4.109 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 3.549 4.564 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 5.546 6.966 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 2.597 4.966 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 5.275 2.653 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 0.760 7.077 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 2.690 2.791 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
object = box small 6.546 4.554 0.375 0.125 0.125 0.125 3 0.95 0.85 0.2
object = box small 3.814 5.776 0.375 0.125 0.125 0.125 2 0.2 0.55 0.85
"""

LARGE_SCENE = """\
# dominated by large targets standing on a ground plane
n_classes = 4
ground_plane = true
ground_class = 4
object = box large 2.0 2.0 0.75 1.25 1.0 0.5 1 0.85 0.25 0.2
object = sphere large 6.0 6.0 0.9 1.0 1.0 1.0 2 0.2 0.55 0.85
object = box large 6.0 2.0 0.75 1.0 1.0 0.5 3 0.95 0.85 0.2
object = box large 2.0 6.0 0.75 1.0 1.25 0.5 1 0.85 0.25 0.2
"""

PRESETS = {"default": DEFAULT_SCENE, "small": SMALL_SCENE, "large": LARGE_SCENE}


def preset(name: str, **overrides) -> SceneSpec:
    spec = scene_spec_from_text(PRESETS[name])
    return dataclasses.replace(spec, **overrides) if overrides else spec
