import subprocess
import sys

import numpy as np
import pytest

from conftest import random_simplex
from semipix.cli import main
from semipix.partition import assign_pseudo_labels, entropy_threshold, prediction_entropy
from semipix.tensors import IGNORE, ProbBatch, tensor_read, tensor_write

TINY_CONFIG = """
seed = 0
epochs = 3
warm_start_epochs = 1
steps_per_epoch = 2
batch_labeled = 4
batch_unlabeled = 4
images = 12
val_images = 4
height = 8
width = 8
num_classes = 4
feature_dim = 6
hidden_dim = 8
repr_dim = 4
overlap = 0.4
label_fraction = 0.25
rank_low = 1
rank_high = 3
anchors_per_class = 8
negatives_per_anchor = 16
bank_capacity_background = 64
bank_capacity_foreground = 64
"""


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG)
    return path


class TestCurate:
    def write_probs(self, tmp_path, seed=0, shape=(1, 8, 8), classes=5):
        probs = random_simplex(np.random.default_rng(seed), shape, classes)
        path = tmp_path / "probs.u2tn"
        tensor_write(probs, path)
        return path, probs

    def test_writes_labels_and_entropy(self, tmp_path, capsys):
        path, probs = self.write_probs(tmp_path)
        code = main(["curate", "--probs", str(path), "--alpha", "0.3",
                     "--out", str(tmp_path / "cur")])
        assert code == 0
        out = capsys.readouterr().out
        assert "entropy_threshold = " in out
        assert "reliable_fraction = " in out

        batch = ProbBatch(probs)
        entropies = prediction_entropy(batch)
        threshold = entropy_threshold(entropies, 0.3)
        want = assign_pseudo_labels(batch, threshold, entropies=entropies)
        labels = tensor_read(tmp_path / "cur.labels.u2tn")
        assert np.array_equal(labels, want.labels)
        stored = tensor_read(tmp_path / "cur.entropy.u2tn")
        assert np.array_equal(stored, entropies)

        reported = float(out.split("reliable_fraction = ")[1].strip())
        assert abs(reported - (labels != IGNORE).mean()) < 1e-15

    def test_alpha_zero_keeps_every_pixel(self, tmp_path, capsys):
        path, _ = self.write_probs(tmp_path, seed=1)
        code = main(["curate", "--probs", str(path), "--alpha", "0.0",
                     "--out", str(tmp_path / "cur")])
        assert code == 0
        labels = tensor_read(tmp_path / "cur.labels.u2tn")
        assert (labels != IGNORE).all()

    def test_invalid_probabilities_exit_1(self, tmp_path):
        bad = np.full((1, 2, 2, 3), 0.5)  # rows sum to 1.5
        path = tmp_path / "bad.u2tn"
        tensor_write(bad, path)
        assert main(["curate", "--probs", str(path), "--alpha", "0.3",
                     "--out", str(tmp_path / "cur")]) == 1

    def test_missing_file_exit_1(self, tmp_path):
        assert main(["curate", "--probs", str(tmp_path / "absent.u2tn"),
                     "--alpha", "0.3", "--out", str(tmp_path / "cur")]) == 1

    def test_alpha_out_of_range_exit_1(self, tmp_path):
        path, _ = self.write_probs(tmp_path)
        assert main(["curate", "--probs", str(path), "--alpha", "1.5",
                     "--out", str(tmp_path / "cur")]) == 1


class TestTrain:
    def test_train_writes_outputs(self, tmp_path, config_file, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "final miou_val = " in stdout
        assert (out / "metrics.csv").exists()
        assert (out / "checkpoint_manifest.txt").exists()

    def test_rerun_is_byte_identical(self, tmp_path, config_file):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(config_file), "--out", str(out_a)]) == 0
        assert main(["train", "--config", str(config_file), "--out", str(out_b)]) == 0
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()

    def test_unknown_config_key_exit_1(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(TINY_CONFIG + "mystery_flag = 3\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1

    def test_invalid_config_value_exit_1(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text(TINY_CONFIG.replace("epochs = 3", "epochs = 0"))
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1

    def test_missing_config_exit_1(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.cfg"),
                     "--out", str(tmp_path / "o")]) == 1


class TestAblate:
    def test_ablate_writes_table(self, tmp_path, config_file, capsys):
        out = tmp_path / "ablation.csv"
        code = main(["ablate", "--config", str(config_file),
                     "--modes", "unreliable,reliable", "--seeds", "0", "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "mode,seed,miou,mean,std"
        assert len(lines) == 1 + 2 + 2
        stdout = capsys.readouterr().out
        assert "unreliable: mean=" in stdout

    def test_unknown_mode_exit_1(self, tmp_path, config_file):
        assert main(["ablate", "--config", str(config_file), "--modes", "sideways",
                     "--seeds", "0", "--out", str(tmp_path / "t.csv")]) == 1

    def test_bad_seed_list_exit_1(self, tmp_path, config_file):
        assert main(["ablate", "--config", str(config_file), "--modes", "all",
                     "--seeds", "one,two", "--out", str(tmp_path / "t.csv")]) == 1


class TestEvalAndDump:
    @pytest.fixture()
    def trained(self, tmp_path, config_file):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--out", str(out)]) == 0
        return out / "checkpoint_manifest.txt"

    def test_eval_reports_per_class_iou(self, trained, config_file, capsys):
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(trained),
                     "--config", str(config_file)]) == 0
        out = capsys.readouterr().out
        assert "class 0: iou = " in out
        assert "mean iou = " in out

    def test_eval_class_count_mismatch_exit_1(self, trained, tmp_path):
        other = tmp_path / "other.cfg"
        other.write_text(
            TINY_CONFIG.replace("num_classes = 4", "num_classes = 3")
        )
        assert main(["eval", "--checkpoint", str(trained), "--config", str(other)]) == 1

    def test_eval_missing_checkpoint_exit_1(self, tmp_path, config_file):
        assert main(["eval", "--checkpoint", str(tmp_path / "nope.txt"),
                     "--config", str(config_file)]) == 1

    def test_dump_reprs_shape_and_range(self, trained, config_file, tmp_path, capsys):
        out = tmp_path / "reprs.u2tn"
        assert main(["dump-reprs", "--checkpoint", str(trained),
                     "--config", str(config_file), "--out", str(out)]) == 0
        reprs = tensor_read(out)
        assert reprs.shape == (12, 8, 8, 4)
        assert np.isfinite(reprs).all()
        assert np.abs(reprs).max() <= 1.0  # tanh output


class TestUsage:
    def test_missing_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == 2

    def test_module_entry_point_runs(self, tmp_path):
        probs = random_simplex(np.random.default_rng(3), (1, 4, 4), 3)
        path = tmp_path / "p.u2tn"
        tensor_write(probs, path)
        proc = subprocess.run(
            [sys.executable, "-m", "semipix", "curate", "--probs", str(path),
             "--alpha", "0.2", "--out", str(tmp_path / "c")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0
        assert "entropy_threshold = " in proc.stdout
