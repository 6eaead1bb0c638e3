import json

import numpy as np
import pytest

from synthloop.cli import main
from synthloop.modification import ModificationSpec
from synthloop.session import Session

from conftest import tiny_config


@pytest.fixture()
def cli_ws(tmp_path):
    """Workspace initialized through the CLI itself."""
    root = tmp_path / "ws"
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(tiny_config().to_json(), encoding="utf-8")
    rc = main(["init", "--benchmark", "default", "--workdir", str(root), "--config", str(cfg_path)])
    assert rc == 0
    return root


class TestCli:
    def test_init_creates_session_at_train(self, cli_ws):
        s = Session.__new__(Session)  # read state without workspace helpers
        state = json.loads((cli_ws / "session" / "state.json").read_text())
        assert state["step"] == "Train"
        assert (cli_ws / "benchmark" / "versions" / "v0" / "boxtruck.mesh").exists()
        assert (cli_ws / "datasets" / "real_train" / "manifest.txt").exists()

    def test_unknown_benchmark_rejected(self, tmp_path, capsys):
        rc = main(["init", "--benchmark", "weird", "--workdir", str(tmp_path / "x")])
        assert rc == 2
        assert "error" in capsys.readouterr().err

    def test_missing_workspace_error(self, tmp_path, capsys):
        rc = main(["train", "--workdir", str(tmp_path / "nope"), "--version", "v0"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "error" in err and "not_found" in err

    def test_loop_steps_through_cycle(self, cli_ws, tmp_path, capsys):
        assert main(["loop-step", "--workdir", str(cli_ws)]) == 0  # Train
        assert main(["loop-step", "--workdir", str(cli_ws)]) == 0  # Evaluate
        out = capsys.readouterr().out
        assert "SelectTarget" in out
        assert main(["loop-step", "--workdir", str(cli_ws), "--override", "wedgecar,boxtruck"]) == 0
        assert main(["loop-step", "--workdir", str(cli_ws)]) == 0  # Diagnose
        specs = tmp_path / "specs.jsonl"
        spec = ModificationSpec(
            target_class="wedgecar",
            action="set_smoothness",
            value=0.1,
            kind="reinforcing",
            new_version_label="vR",
            region_tags=("hull",),
        )
        specs.write_text(spec.to_json() + "\n", encoding="utf-8")
        assert main(["loop-step", "--workdir", str(cli_ws), "--specs", str(specs)]) == 0  # Modify
        assert main(["loop-step", "--workdir", str(cli_ws)]) == 0  # Regenerate
        out = capsys.readouterr().out
        assert "Train" in out and "vR" in out

    def test_train_and_evaluate_single_seed(self, cli_ws, capsys):
        assert main(["train", "--workdir", str(cli_ws), "--version", "v0", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        assert "mAP50" in out

    def test_render_dataset_for_version(self, cli_ws, capsys):
        store_dir = cli_ws / "benchmark" / "versions"
        from synthloop.modification import VersionStore

        spec = ModificationSpec(
            target_class="turrettank",
            action="scale_emission",
            value=0.2,
            kind="disruptive",
            new_version_label="vD",
            region_tags=("rear_engine",),
        )
        VersionStore(store_dir).apply("v0", [spec])
        assert main(["render-dataset", "--workdir", str(cli_ws), "--version", "vD"]) == 0
        assert (cli_ws / "datasets" / "syn_vD" / "manifest.txt").exists()

    def test_modify_command(self, cli_ws, tmp_path):
        specs = tmp_path / "s.jsonl"
        spec = ModificationSpec(
            target_class="boxtruck",
            action="set_reflectance",
            value=0.3,
            kind="disruptive",
            new_version_label="vX",
            region_tags=("hull",),
        )
        specs.write_text(spec.to_json() + "\n", encoding="utf-8")
        assert main(["modify", "--workdir", str(cli_ws), "--parent", "v0", "--specs", str(specs)]) == 0
        assert (cli_ws / "benchmark" / "versions" / "vX" / "record.txt").exists()

    def test_pca_check(self, cli_ws, capsys):
        assert main(["pca-check", "--workdir", str(cli_ws)]) == 0
        out = capsys.readouterr().out
        assert "striped" in out and "disjoint" in out
        assert (cli_ws / "reports" / "pca_striped.png").exists()

    def test_invalid_class_index_in_explain(self, cli_ws, capsys):
        rc = main(["explain", "--workdir", str(cli_ws), "--class", "9", "--bin", "90"])
        assert rc == 2
