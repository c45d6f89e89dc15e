import pytest
from hypothesis import given
from hypothesis import strategies as st

from drivehands.config import (
    FIELD_NAMES,
    ConfigError,
    PipelineConfig,
    flag_name,
    load_config,
    parse_text,
    parse_value,
)


def test_defaults():
    c = PipelineConfig()
    assert (c.k, c.conf_thresh, c.nms_iou, c.tau) == (10, 0.15, 0.45, 0.5)
    assert (c.hog_cell, c.hog_stride, c.hog_block, c.hog_bins) == (8, 8, 16, 9)
    assert (c.pca_dim, c.folds) == (30, 10)
    assert (c.n_trees, c.max_depth, c.min_leaf, c.max_features) == (30, 12, 5, None)
    assert (c.margin, c.f_min, c.pad) == (0.15, 0.02, 0.05)
    assert c.hog_params().length() == 8100


def test_text_round_trip():
    c = PipelineConfig(k=3, c_grid=(0.5, 2.0), level="L1", masked=False, svm_iter=50)
    assert load_config(None, parse_text(c.to_text())) == c
    assert load_config(None, parse_text(PipelineConfig().to_text())) == PipelineConfig()


def test_file_then_flags(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nk = 4\nconf_thresh = 0.3  # trailing\n\nuse_lab = yes\n")
    c = load_config(p, {"k": 6})
    assert (c.k, c.conf_thresh, c.use_lab) == (6, 0.3, True)


@pytest.mark.parametrize("text, msg", [
    ("bogus = 1", "c.cfg:1: unknown key 'bogus'"),
    ("k = 2\nk = 3", "c.cfg:2: duplicate key"),
    ("k 2", "c.cfg:1: expected 'key = value'"),
    ("k = two", "c.cfg:1: k:"),
    ("use_lab = maybe", "boolean"),
    ("tau = 1.5", "tau must lie"),
    ("k = 2\nblend_n = 3", "blend_n must not exceed k"),
    ("hog_block = 12", "multiple of cell"),
])
def test_rejects(tmp_path, text, msg):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=msg):
        load_config(p)


def test_optional_and_tuple_parsing():
    assert parse_value("max_features", "auto") is None
    assert parse_value("max_features", "7") == 7
    assert parse_value("c_grid", "0.1, 1,10") == (0.1, 1.0, 10.0)
    assert parse_value("hist_bins", "4,4,4") == (4, 4, 4)
    with pytest.raises(ConfigError):
        parse_value("nope", "1")
    with pytest.raises(ConfigError):
        load_config(None, {"nope": 1})


def test_flag_names_cover_fields():
    assert flag_name("conf_thresh") == "--conf-thresh"
    assert "seed" in FIELD_NAMES and "min_cluster_images" in FIELD_NAMES


@given(st.integers(1, 50), st.floats(0, 1), st.booleans())
def test_builders_carry_values(k, tau, masked):
    c = PipelineConfig(k=k, tau=tau, masked=masked)
    assert c.refine_params().tau == tau and c.fallback_params().tau == tau
    assert c.grasp_config().masked == masked
    assert c.to_dict()["k"] == k
