import pytest
from hypothesis import given, settings, strategies as st

from conftest import ini
from spincim.config import SCHEMA, default_config, load_config, parse_config
from spincim.errors import ConfigError


def test_defaults():
    cfg = default_config(seed=5)
    assert cfg.seed == 5
    assert cfg["method"]["name"] == "scaledrop" and cfg["train"]["epochs"] == 100
    spec = cfg.model_spec()
    assert spec.input_shape == (2,) and len(spec.weighted_indices()) == 3
    assert cfg.device_setup().strategy == "unfold_column"
    assert cfg.train_params().lam == 1e-3


@pytest.mark.parametrize("text, field", [
    ("[model]\nbogus = 1\n", "model.bogus"),
    ("[network]\nlayers = dense:2\n", "[network]"),
    ("[method]\np = 1.5\n", "method.p"),
    ("[method]\nname = mcd\n", "method.name"),
    ("[train]\nepochs = zero\n", "train.epochs"),
    ("[crossbar]\nadc_bits = -1\n", "crossbar.adc_bits"),
    ("[method]\np_min = 0.3\np_max = 0.1\n", "method.p_min"),
    ("[device]\ng_on = 1\ng_off = 2\n", "device.g_on"),
    ("[train]\ndataset = idx\n", "train.train_images"),
    ("[model]\nlayers = dense:4, warp:2\n", "model.layers"),
    ("[model]\ninput_shape = 2\nlayers = conv:3:3\n", "model.layers"),
    ("not an ini file", "malformed"),
])
def test_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_values_are_converted():
    cfg = parse_config(ini({"model": {"input_shape": "1x28x28", "layers": "flatten, dense:8, dense:10",
                                      "real_first_last": "no"},
                            "crossbar": {"max_rows": "none", "max_cols": "64"},
                            "method": {"adaptive": "yes", "name": "spindrop"}}))
    assert cfg["model"]["input_shape"] == (1, 28, 28)
    assert cfg["crossbar"]["max_rows"] is None and cfg["crossbar"]["max_cols"] == 64
    assert cfg.method_params().adaptive is True
    assert all(cfg.model_spec().layers[i].binary_weights for i in cfg.model_spec().weighted_indices())


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(SCHEMA["method"]["name"][1:] and ["spindrop", "spatial", "scaledrop", "affine",
                                                          "vi_subset", "spinbayes"]),
       st.floats(0.0, 1.0), st.integers(1, 500), st.sampled_from(["unfold_column", "kxk_grid"]),
       st.one_of(st.none(), st.integers(1, 1024)), st.integers(0, 2 ** 32))
def test_ini_round_trip(name, p, epochs, strategy, max_rows, seed):
    cfg = parse_config(ini({"method": {"name": name, "p": repr(p)}, "train": {"epochs": epochs},
                            "crossbar": {"strategy": strategy, "max_rows": max_rows or "none"}}), seed)
    again = parse_config(cfg.to_ini(), seed)
    assert again.values == cfg.values


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.ini")
    path = tmp_path / "run.ini"
    path.write_text("[method]\nname = affine\n")
    assert load_config(path, 3)["method"]["name"] == "affine"
