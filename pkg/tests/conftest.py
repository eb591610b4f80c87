import pytest

from splatfuse.diffcore import RngStream
from splatfuse.harness import RunConfig, generate_scene, scene_spec_from_text

TINY_SCENE = """\
grid_dims = 16 16 4
voxel_size = 0.5
n_classes = 3
camera_count = 2
image_width = 24
image_height = 24
lidar_rays = 1500
object = box large 3.0 3.0 0.75 0.75 0.75 0.75 1 0.85 0.25 0.2
object = sphere small 5.5 5.0 0.5 0.5 0.5 0.5 2 0.2 0.55 0.85
object = box small 5.5 2.5 0.25 0.25 0.25 0.25 3 0.95 0.85 0.2
"""


def tiny_config(**kw) -> RunConfig:
    base = dict(grid_dims=(16, 16, 4), voxel_size=0.5, channels=6, phase1_iters=6, phase2_iters=6,
                densify_every=3, lr=1e-2, init_hidden=6, head_hidden=8)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def tiny_spec():
    return scene_spec_from_text(TINY_SCENE)


@pytest.fixture(scope="session")
def tiny_scene(tiny_spec):
    return generate_scene(tiny_spec, RngStream(7))


# -- acceptance summary --------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _CRITERIA.setdefault(num, {"title": title, "ok": True, "detail": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["detail"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        e = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}")
        for line in e["detail"]:
            for sub in str(line).splitlines():
                terminalreporter.write_line(f"               {sub}")
