import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from drivehands.illumskin import ForestParams, bank_train
from drivehands.imagecore import ScoredBox
from drivehands.synth import SyntheticSceneSpec, generate_corpus

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def boxes(draw, max_xy=100.0, max_wh=60.0, scored=True):
    x = draw(st.floats(-20.0, max_xy, allow_nan=False))
    y = draw(st.floats(-20.0, max_xy, allow_nan=False))
    w = draw(st.floats(0.5, max_wh, allow_nan=False))
    h = draw(st.floats(0.5, max_wh, allow_nan=False))
    s = draw(st.floats(0.0, 1.0)) if scored else 1.0
    return ScoredBox(x, y, w, h, s)


def blob_image(w=64, h=48, box=(20, 14, 24, 20), skin=(205, 150, 120), bg=(60, 70, 110)):
    """Flat background with one filled skin rectangle; returns (image, mask)."""
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = bg
    mask = np.zeros((h, w), dtype=bool)
    x, y, bw, bh = box
    mask[y:y + bh, x:x + bw] = True
    img[mask] = skin
    return img, mask


@pytest.fixture(scope="session")
def scenes():
    return generate_corpus(SyntheticSceneSpec(seed=11), 36)


@pytest.fixture(scope="session")
def small_bank(scenes):
    """A quick skin bank (K=3, 8 trees) trained on 30 synthetic scenes."""
    return bank_train([(s.image, s.skin) for s in scenes[:30]], k=3,
                      params=ForestParams(n_trees=8, max_depth=10), seed=0, samples_per_image=300)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in results:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
