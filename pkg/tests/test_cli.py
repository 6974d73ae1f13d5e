"""End-to-end tests of the command-line surface.

Every test drives ``main(argv)`` in process. The heavyweight invariants
(directional quality, toy-model recovery across seeds) live in
test_acceptance.py; this file checks the file contracts, exit codes, and
determinism of each subcommand.
"""

import json
import os

import numpy as np
import pytest

from scone.cli import main


def make_raw(path, n_users=40, n_items=30, per_user=10, seed=3):
    # popularity-skewed item choice so count strata are nonempty
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1)
    weights /= weights.sum()
    with open(path, "w", encoding="utf-8") as fh:
        for u in range(n_users):
            items = rng.choice(n_items, size=per_user, replace=False, p=weights)
            for i in items:
                fh.write(f"user{u}\titem{i}\n")
    return path


TINY_CONFIG = """\
# small enough to train in a couple of seconds
embed_dim = 8
batch_size = 64
max_epochs = 2
learning_rate = 0.01
sampling_steps = 4
eval_k = 5
seed = 0
"""


@pytest.fixture(scope="module")
def raw_file(tmp_path_factory):
    return make_raw(str(tmp_path_factory.mktemp("raw") / "ratings.tsv"))


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory, raw_file):
    out = str(tmp_path_factory.mktemp("prepared"))
    assert main(["prepare", "--input", raw_file, "--out", out]) == 0
    return out


@pytest.fixture(scope="module")
def train_dir(tmp_path_factory, data_dir):
    out = str(tmp_path_factory.mktemp("run"))
    cfg = os.path.join(out, "config.txt")
    with open(cfg, "w", encoding="utf-8") as fh:
        fh.write(TINY_CONFIG)
    assert main(["train", "--data", data_dir, "--config", cfg,
                 "--out", out, "--quiet"]) == 0
    return out


def read_file(path, mode="rb"):
    with open(path, mode) as fh:
        return fh.read()


SPLIT_FILES = ("train.tsv", "valid.tsv", "test.tsv", "user_map.tsv",
               "item_map.tsv")


class TestPrepare:
    def test_writes_six_files(self, tmp_path, raw_file, capsys):
        out = str(tmp_path / "prep")
        assert main(["prepare", "--input", raw_file, "--out", out]) == 0
        assert sorted(os.listdir(out)) == sorted(SPLIT_FILES + ("manifest.json",))
        stdout = capsys.readouterr().out
        assert "prepared 40 users, 30 items" in stdout

    def test_split_counts(self, data_dir):
        # 10 interactions per user and a 7:1:2 split
        counts = {name: len(read_file(os.path.join(data_dir, name), "r").splitlines())
                  for name in ("train.tsv", "valid.tsv", "test.tsv")}
        assert counts == {"train.tsv": 280, "valid.tsv": 40, "test.tsv": 80}

    def test_missing_input_exit_2(self, tmp_path, capsys):
        missing = str(tmp_path / "nope.tsv")
        assert main(["prepare", "--input", missing, "--out", str(tmp_path / "o")]) == 2
        assert missing in capsys.readouterr().err

    def test_same_seed_byte_identical(self, tmp_path, raw_file):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            assert main(["prepare", "--input", raw_file, "--out", out,
                         "--seed", "11"]) == 0
        for name in SPLIT_FILES:
            assert read_file(os.path.join(a, name)) == read_file(os.path.join(b, name))

    def test_manifest_contract(self, data_dir):
        with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert set(manifest) == {"command", "config", "seed", "version",
                                 "started", "finished", "outputs"}
        assert manifest["command"] == "prepare"
        assert manifest["seed"] == 0
        assert set(SPLIT_FILES) <= set(manifest["outputs"])


class TestTrain:
    def test_artifacts_and_stdout(self, tmp_path, data_dir, capsys):
        out = str(tmp_path / "run")
        cfg = str(tmp_path / "cfg.txt")
        with open(cfg, "w", encoding="utf-8") as fh:
            fh.write(TINY_CONFIG)
        assert main(["train", "--data", data_dir, "--config", cfg,
                     "--out", out, "--quiet"]) == 0
        for name in ("history.csv", "best_theta.ckpt", "best_sgm.ckpt",
                     "manifest.json", os.path.join("last", "theta.ckpt"),
                     os.path.join("last", "sgm.ckpt")):
            assert os.path.isfile(os.path.join(out, name)), name
        assert "best valid recall@5 = " in capsys.readouterr().out

    def test_lightgcn_ablation_zeroes_generative_losses(self, tmp_path, data_dir):
        out = str(tmp_path / "run")
        cfg = str(tmp_path / "cfg.txt")
        with open(cfg, "w", encoding="utf-8") as fh:
            fh.write(TINY_CONFIG)
        assert main(["train", "--data", data_dir, "--config", cfg,
                     "--ablation", "lightgcn", "--out", out, "--quiet"]) == 0
        lines = read_file(os.path.join(out, "history.csv"), "r").splitlines()
        header = lines[0].split(",")
        cl, sgm = header.index("cl_loss"), header.index("sgm_loss")
        assert len(lines) > 1
        for line in lines[1:]:
            cells = line.split(",")
            assert float(cells[cl]) == 0.0
            assert float(cells[sgm]) == 0.0

    def test_preset_snapshot_in_manifest(self, tmp_path, data_dir):
        out = str(tmp_path / "run")
        assert main(["train", "--data", data_dir, "--config", "douban",
                     "--ablation", "lightgcn", "--out", out, "--quiet"]) == 0
        with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert manifest["config"]["lambda1"] == 0.5
        assert manifest["config"]["w"] == 0.9
        assert manifest["config"]["use_cl"] is False  # ablation applied

    def test_seed_override_lands_in_manifest(self, tmp_path, data_dir):
        out = str(tmp_path / "run")
        cfg = str(tmp_path / "cfg.txt")
        with open(cfg, "w", encoding="utf-8") as fh:
            fh.write(TINY_CONFIG)
        assert main(["train", "--data", data_dir, "--config", cfg,
                     "--seed", "7", "--out", out, "--quiet"]) == 0
        with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert manifest["seed"] == 7
        assert manifest["config"]["seed"] == 7

    def test_bad_config_exit_2(self, tmp_path, data_dir, capsys):
        cfg = str(tmp_path / "cfg.txt")
        with open(cfg, "w", encoding="utf-8") as fh:
            fh.write("lambda1 = frog\n")
        assert main(["train", "--data", data_dir, "--config", cfg,
                     "--out", str(tmp_path / "run")]) == 2
        assert "lambda1" in capsys.readouterr().err

    def test_missing_data_dir_exit_2(self, tmp_path, capsys):
        assert main(["train", "--data", str(tmp_path / "absent"),
                     "--out", str(tmp_path / "run")]) == 2
        assert "absent" in capsys.readouterr().err


class TestEval:
    def test_stdout_schema(self, train_dir, data_dir, capsys):
        ckpt = os.path.join(train_dir, "best_theta.ckpt")
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "metric,group,value"
        assert lines[1].startswith("recall@5,all,")
        assert lines[2].startswith("ndcg@5,all,")
        for line in lines[1:]:
            value = float(line.split(",")[2])
            assert 0.0 <= value <= 1.0

    def test_valid_split_also_evaluates(self, train_dir, data_dir, capsys):
        ckpt = os.path.join(train_dir, "best_theta.ckpt")
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5", "--on", "valid"]) == 0
        assert "recall@5,all," in capsys.readouterr().out

    def test_strata_rows_and_additivity(self, train_dir, data_dir, capsys):
        ckpt = os.path.join(train_dir, "best_theta.ckpt")
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5", "--strata"]) == 0
        rows = [line.split(",")
                for line in capsys.readouterr().out.splitlines()[1:]]
        labels = [(r[0], r[1]) for r in rows]
        for group in ("top", "mid", "low"):
            assert ("recall@5", f"user_{group}") in labels
            assert ("ndcg@5", f"user_{group}") in labels
            assert ("decomposed_recall@5", f"item_{group}") in labels
        assert len(rows) == 11
        total = float(rows[0][2])
        parts = sum(float(r[2]) for r in rows if r[0] == "decomposed_recall@5")
        assert abs(parts - total) < 1e-9

    def test_uniformity_rows(self, train_dir, data_dir, capsys):
        ckpt = os.path.join(train_dir, "best_theta.ckpt")
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5", "--uniformity", "--popular-threshold", "0"]) == 0
        rows = [line.split(",")
                for line in capsys.readouterr().out.splitlines()[1:]]
        labels = [(r[0], r[1]) for r in rows]
        assert ("uniformity", "users") in labels
        assert ("uniformity", "items") in labels
        for r in rows:
            if r[0] == "uniformity":
                assert float(r[2]) <= 0.0

        # a threshold nothing clears drops the item row but keeps the user row
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5", "--uniformity",
                     "--popular-threshold", "100000"]) == 0
        labels = [tuple(line.split(",")[:2])
                  for line in capsys.readouterr().out.splitlines()[1:]]
        assert ("uniformity", "users") in labels
        assert ("uniformity", "items") not in labels

    def test_random_embeddings_score_at_chance(self, tmp_path, capsys):
        # 300 users x 400 items, 10 interactions per user; a random checkpoint
        # must produce chance-level recall: E = k / candidate_count.
        raw = make_raw(str(tmp_path / "big.tsv"), n_users=300, n_items=400,
                       per_user=10, seed=5)
        data = str(tmp_path / "data")
        assert main(["prepare", "--input", raw, "--out", data]) == 0
        n_users = len(read_file(os.path.join(data, "user_map.tsv"), "r").splitlines())
        n_items = len(read_file(os.path.join(data, "item_map.tsv"), "r").splitlines())
        from scone.checkpoint import save_embeddings
        rng = np.random.default_rng(0)
        ckpt = str(tmp_path / "random.ckpt")
        save_embeddings(ckpt, rng.standard_normal(
            (n_users + n_items, 16)).astype(np.float32))
        capsys.readouterr()
        assert main(["eval", "--data", data, "--checkpoint", ckpt,
                     "--k", "20"]) == 0
        recall = float(capsys.readouterr().out.splitlines()[1].split(",")[2])
        chance = 20.0 / (n_items - 7 - 1)  # train and valid items are masked
        # 3 standard errors of the mean over 300 users (sd per user ~ 0.16)
        assert abs(recall - chance) < 0.03

    def test_node_count_mismatch_exit_2(self, tmp_path, data_dir, capsys):
        from scone.checkpoint import save_embeddings
        ckpt = str(tmp_path / "wrong.ckpt")
        save_embeddings(ckpt, np.zeros((69, 8), dtype=np.float32))
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt]) == 2
        err = capsys.readouterr().err
        assert "69" in err and "70" in err

    def test_missing_checkpoint_exit_2(self, tmp_path, data_dir, capsys):
        missing = str(tmp_path / "none.ckpt")
        assert main(["eval", "--data", data_dir, "--checkpoint", missing]) == 2
        assert missing in capsys.readouterr().err

    def test_out_file_reruns_byte_identical(self, tmp_path, train_dir, data_dir,
                                            capsys):
        ckpt = os.path.join(train_dir, "best_theta.ckpt")
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        for out in (a, b):
            assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                         "--k", "5", "--strata", "--uniformity", "--out", out]) == 0
        assert read_file(a) == read_file(b)
        # --out and stdout carry the same bytes
        assert main(["eval", "--data", data_dir, "--checkpoint", ckpt,
                     "--k", "5", "--strata", "--uniformity"]) == 0
        assert capsys.readouterr().out == read_file(a, "r")


class TestToySgm:
    def test_report_contract_and_exit_consistency(self, tmp_path, capsys):
        # deliberately undertrained: the report contract holds either way
        out = str(tmp_path / "toy")
        code = main(["toysgm", "--out", out, "--iters", "40", "--draws", "256"])
        with open(os.path.join(out, "toysgm_report.json"), encoding="utf-8") as fh:
            report = json.load(fh)
        assert set(report) == {"seed", "final_dsm_loss", "sample_mean",
                               "target_mean", "mean_error", "cov_trace",
                               "target_cov_trace", "cov_trace_rel_error",
                               "passed"}
        assert code == (0 if report["passed"] else 1)
        assert os.path.isfile(os.path.join(out, "manifest.json"))
        assert "toysgm" in capsys.readouterr().out

    def test_same_seed_byte_identical_report(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for out in (a, b):
            main(["toysgm", "--out", out, "--iters", "40", "--draws", "256",
                  "--seed", "9"])
        assert (read_file(os.path.join(a, "toysgm_report.json"))
                == read_file(os.path.join(b, "toysgm_report.json")))

    def test_odd_means_exit_2(self, tmp_path, capsys):
        assert main(["toysgm", "--out", str(tmp_path / "t"),
                     "--means", "1.0", "0.0", "2.0"]) == 2
        assert "means" in capsys.readouterr().err

    def test_out_path_is_a_file_exit_2(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        assert main(["toysgm", "--out", str(blocker), "--iters", "1"]) == 2


class TestParser:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["prepare", "--bogus"])
        assert exc.value.code == 2
