import os

import numpy as np
import pytest
from hypothesis import settings

from owg.imaging import CameraModel, LabelMask, SceneObservation

# property tests draw the same examples on every run
settings.register_profile("repo", derandomize=True, database=None)
settings.load_profile("repo")

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")


def toy_scene(h=64, w=80, depth=1.0):
    """Three rectangular segments on a flat background, identity extrinsics."""
    rgb = np.full((h, w, 3), 90, dtype=np.uint8)
    labels = np.zeros((h, w), dtype=np.uint8)
    boxes = [(5, 6, 25, 20), (40, 10, 70, 24), (20, 38, 50, 58)]  # u0, v0, u1, v1
    colors = [(200, 40, 40), (40, 200, 40), (40, 40, 200)]
    for i, ((u0, v0, u1, v1), c) in enumerate(zip(boxes, colors), start=1):
        labels[v0:v1, u0:u1] = i
        rgb[v0:v1, u0:u1] = c
    cam = CameraModel(60.0, 60.0, (w - 1) / 2, (h - 1) / 2)
    obs = SceneObservation(rgb, np.full((h, w), depth), cam)
    return obs, LabelMask(labels)


@pytest.fixture
def scene():
    return toy_scene()


PALETTE = {"orange": (240, 140, 30), "teal": (30, 160, 150), "purple": (130, 50, 170), "yellow": (240, 220, 40)}


def palette_scene(size=96):
    """Four colored discs on a plain background, one per palette color."""
    rgb = np.zeros((size, size, 3), dtype=np.uint8)
    rgb[:] = (150, 140, 130)
    labels = np.zeros((size, size), dtype=np.uint8)
    v, u = np.mgrid[0:size, 0:size]
    centers = [(20, 20), (70, 22), (24, 72), (72, 70)]
    for i, ((cu, cv), color) in enumerate(zip(centers, PALETTE.values()), start=1):
        disc = (u - cu) ** 2 + (v - cv) ** 2 <= 64
        rgb[disc] = color
        labels[disc] = i
    cam = CameraModel(80.0, 80.0, (size - 1) / 2, (size - 1) / 2)
    return SceneObservation(rgb, np.ones((size, size)), cam), LabelMask(labels)


# acceptance criteria report: filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title}: {detail}")
