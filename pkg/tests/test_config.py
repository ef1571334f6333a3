import pytest
import yaml

from scenecloak.config import (
    DatasetSpec,
    RunConfig,
    SyntheticSpec,
    dump_config,
    from_dict,
    load_config,
    to_dict,
)
from scenecloak.core import ConfigError, DataError
from scenecloak.engines import Method


def test_defaults():
    cfg = load_config()
    assert cfg.methods == [m.value for m in Method]
    assert cfg.epsilons == [0.0, 0.01, 0.05]
    assert cfg.sobel.blur_sigma == 10.0 and cfg.side == 256
    assert cfg.adapters.attack.name == "tiny_conv"
    assert cfg.probe.epsilon == 0.15 and cfg.probe.n == 100


def test_nested_parsing(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(
        "seed: 3\n"
        "sobel: {blur_sigma: 2.5}\n"
        "adapters:\n  attack: {name: linear, options: {num_classes: 4}}\n  saliency: null\n"
        "dataset: {synthetic: {n_per_class: 2}}\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.sobel.blur_sigma == 2.5
    assert cfg.adapters.attack.options == {"num_classes": 4}
    assert cfg.adapters.saliency is None
    assert cfg.dataset.synthetic.n_per_class == 2
    assert cfg.method_config.sobel.blur_sigma == 2.5


@pytest.mark.parametrize(
    "text, match",
    [
        ("sedd: 1\n", "unknown key.*sedd"),
        ("sobel: {sigma: 3}\n", r"config\.sobel"),
        ("adapters: {attack: {nam: linear}}\n", r"config\.adapters\.attack"),
        ("methods: [pgd]\n", "unknown method"),
        ("workers: 0\n", "workers"),
        ("sobel: {blur_sigma: -1}\n", "invalid"),
        ("scaling_mode: nope\n", "scaling"),
        ("sobel: 3\n", "mapping"),
        ("seed: [1\n", "cannot parse"),
    ],
)
def test_strict_errors(tmp_path, text, match):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(path)


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/no/such/config.yaml")


def test_dotted_overrides_win(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 1\nprobe: {n: 10}\n")
    cfg = load_config(path, {"seed": 9, "probe.epsilon": 0.05, "sobel.blur_sigma": 4.0})
    assert cfg.seed == 9 and cfg.probe.n == 10 and cfg.probe.epsilon == 0.05
    assert cfg.sobel.blur_sigma == 4.0


@pytest.mark.parametrize("kw", [{}, {"path": "a", "synthetic": SyntheticSpec()}, {"path": "a", "manifest": "b"}])
def test_dataset_needs_exactly_one_source(kw):
    with pytest.raises(ConfigError, match="exactly one"):
        DatasetSpec(**kw)


def test_dataset_path_validation(tmp_path):
    DatasetSpec(path=str(tmp_path)).validate_paths()
    with pytest.raises(DataError, match="dataset.path"):
        DatasetSpec(path=str(tmp_path / "nope")).validate_paths()


def test_round_trip(tmp_path):
    cfg = load_config(overrides={"seed": 5, "methods": ["vanilla_fgsm"]})
    dump_config(cfg, tmp_path / "e.yaml")
    again = load_config(tmp_path / "e.yaml")
    assert to_dict(again) == to_dict(cfg)
    assert yaml.safe_load((tmp_path / "e.yaml").read_text())["seed"] == 5


def test_from_dict_none_gives_defaults():
    assert to_dict(from_dict(RunConfig, None)) == to_dict(RunConfig())
