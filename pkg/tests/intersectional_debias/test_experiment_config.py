"""Experiment YAML loading, validation and grid expansion."""

import sys
from pathlib import Path

import pytest
import yaml

# Add the tools directory to the path
repo_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(repo_root / "tools"))

from intersectional_debias.errors import ConfigError
from intersectional_debias.experiment_config import ExperimentConfig

from .helpers import schema_dict

SYNTHETIC = {
    "n": 200,
    "d": 4,
    "seed": 1,
    "schema": schema_dict([2, 2]),
    "label_signal": 1.0,
    "attribute_signal": [1.0, 1.0],
    "label_bias": [0.0, 0.0],
    "noise_std": 1.0,
}


def _config(experiments, **extra):
    data = {
        "name": "t",
        "seed": 3,
        "dataset": {"synthetic": SYNTHETIC},
        "experiments": experiments,
    }
    data.update(extra)
    return data


def test_grid_expansion_is_lexicographic_by_key():
    config = ExperimentConfig.from_dict(
        _config(
            [
                {
                    "method": "constrained",
                    "grouping": ["INDEP", "GERRY"],
                    "nu": [0.02, 0.05],
                    "T": 5,
                }
            ]
        )
    )
    cells = config.cells()
    assert [(c.grouping, c.hparams["nu"]) for c in cells] == [
        ("INDEP", 0.02),
        ("INDEP", 0.05),
        ("GERRY", 0.02),
        ("GERRY", 0.05),
    ]
    assert cells[0].hparams == {"T": 5, "model_kind": "linear", "nu": 0.02}
    assert [c.cell_id for c in cells][:2] == ["000-constrained-indep", "001-constrained-indep"]


def test_cells_keep_experiment_order_and_baseline_has_no_grouping():
    config = ExperimentConfig.from_dict(
        _config(
            [
                {"method": "biased-baseline", "T": 3},
                {
                    "method": "inlp",
                    "grouping": "GERRY",
                    "variant": "principal",
                    "max_iterations": 2,
                },
            ]
        )
    )
    cells = config.cells()
    assert [c.cell_id for c in cells] == ["000-biased-baseline-none", "001-inlp-gerry"]
    assert "model_kind" not in cells[1].hparams


def test_inlp_cell_builds_probe_configs():
    config = ExperimentConfig.from_dict(
        _config(
            [
                {
                    "method": "inlp",
                    "grouping": "INTER",
                    "variant": "naive",
                    "max_iterations": 2,
                    "probe_epochs": 7,
                    "probe_batch_size": None,
                }
            ]
        )
    )
    inlp = config.cells()[0].inlp_config(seed=config.seed, jobs=1)
    assert inlp.group_kind == "INTER" and inlp.variant == "naive"
    assert inlp.probe_config.epochs == 7
    assert inlp.probe_config.batch_size is None
    assert inlp.probe_config.seed == 3
    assert inlp.main_probe_config.seed == 4


def test_single_method_form_is_accepted():
    data = {"seed": 0, "dataset": {"synthetic": SYNTHETIC}, "method": "biased-baseline", "T": 2}
    config = ExperimentConfig.from_dict(data)
    assert [c.method for c in config.cells()] == ["biased-baseline"]


@pytest.mark.parametrize(
    "entry",
    [
        {"method": "adversarial", "T": 3},
        {"method": "constrained", "grouping": "GERRY", "T": 3},
        {"method": "biased-baseline", "T": 3, "nu": 0.1},
        {"method": "inlp", "grouping": "PAIRS", "variant": "naive", "max_iterations": 1},
        {"method": "constrained", "grouping": "GERRY", "nu": 0.05, "T": 501},
        {"method": "constrained", "grouping": "GERRY", "nu": 2.0, "T": 5},
        {"method": "constrained", "grouping": "GERRY", "nu": [], "T": 5},
        {"method": "inlp", "grouping": "INDEP", "variant": "naive", "max_iterations": 0},
    ],
)
def test_invalid_experiments_are_rejected(entry):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_config([entry]))


def test_dataset_needs_exactly_one_source():
    bad = _config([{"method": "biased-baseline", "T": 1}])
    bad["dataset"] = {"synthetic": SYNTHETIC, "path": "somewhere"}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)
    bad["dataset"] = {}
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_resolves_paths_relative_to_config(tmp_path):
    (tmp_path / "spec.yaml").write_text(yaml.safe_dump(SYNTHETIC), encoding="utf-8")
    data = _config([{"method": "biased-baseline", "T": 1}], output_dir="runs/a")
    data["dataset"] = {"synthetic": "spec.yaml"}
    path = tmp_path / "experiment.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    config = ExperimentConfig.load(path)
    assert config.dataset.synthetic is not None
    assert config.dataset.synthetic.n == 200
    assert config.output_dir == tmp_path.resolve() / "runs/a"
    assert config.source == path.resolve()


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "absent.yaml")


def test_sample_configs_load():
    config = ExperimentConfig.load(repo_root / "tools" / "config" / "experiment.yaml")
    methods = {c.method for c in config.cells()}
    assert methods == {"biased-baseline", "inlp", "constrained"}
