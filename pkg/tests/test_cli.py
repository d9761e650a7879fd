"""CLI tests: command flows, idempotent prepare, digest gating, exit codes."""

import os
from pathlib import Path

import numpy as np
import pytest

from osdkit.cli import main
from osdkit.errors import EXIT_CONFIG_ERROR, EXIT_DATA_ERROR, EXIT_OK


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Small fixture corpus (3 recordings x 8 s) with a prepared cache."""
    root = tmp_path_factory.mktemp("corpus")
    fix_dir = root / "fix"
    cache_dir = root / "cache"
    rc = main(
        [
            "make-fixtures",
            "--set", f"out_dir={fix_dir}",
            "--set", "fix_recordings=3",
            "--set", "fix_duration_s=8.0",
            "--seed", "11",
        ]
    )
    assert rc == EXIT_OK
    rc = main(
        [
            "prepare",
            "--set", f"manifest={fix_dir}/manifest.tsv",
            "--set", f"rttm_dir={fix_dir}/rttm",
            "--set", f"cache_dir={cache_dir}",
        ]
    )
    assert rc == EXIT_OK
    return {"fix": fix_dir, "cache": cache_dir}


def _common(corpus):
    return [
        "--set", f"manifest={corpus['fix']}/manifest.tsv",
        "--set", f"cache_dir={corpus['cache']}",
    ]


class TestPrepare:
    def test_rerun_is_idempotent(self, corpus, capsys):
        rc = main(
            [
                "prepare",
                "--set", f"manifest={corpus['fix']}/manifest.tsv",
                "--set", f"rttm_dir={corpus['fix']}/rttm",
                "--set", f"cache_dir={corpus['cache']}",
            ]
        )
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        assert "prepared 0 segment(s), skipped 6" in out

    def test_missing_rttm_reported_others_processed(self, tmp_path, capsys):
        fix_dir = tmp_path / "fix"
        main(
            [
                "make-fixtures",
                "--set", f"out_dir={fix_dir}",
                "--set", "fix_recordings=3",
                "--set", "fix_duration_s=8.0",
            ]
        )
        (fix_dir / "rttm" / "rec_001.rttm").unlink()
        rc = main(
            [
                "prepare",
                "--set", f"manifest={fix_dir}/manifest.tsv",
                "--set", f"rttm_dir={fix_dir}/rttm",
                "--set", f"cache_dir={tmp_path}/cache",
            ]
        )
        captured = capsys.readouterr()
        assert rc == EXIT_DATA_ERROR
        assert "rec_001" in captured.err
        assert "prepared 4 segment(s)" in captured.out
        assert (tmp_path / "cache/features/rec_000_0000.npz").is_file()
        assert not (tmp_path / "cache/features/rec_001_0000.npz").exists()

    def test_parallel_jobs_match_serial(self, tmp_path):
        fix_dir = tmp_path / "fix"
        main(
            [
                "make-fixtures",
                "--set", f"out_dir={fix_dir}",
                "--set", "fix_recordings=4",
                "--set", "fix_duration_s=8.0",
            ]
        )
        args = [
            "prepare",
            "--set", f"manifest={fix_dir}/manifest.tsv",
            "--set", f"rttm_dir={fix_dir}/rttm",
        ]
        assert main(args + ["--set", f"cache_dir={tmp_path}/c1", "--jobs", "1"]) == EXIT_OK
        assert main(args + ["--set", f"cache_dir={tmp_path}/c2", "--jobs", "3"]) == EXIT_OK
        a = np.load(tmp_path / "c1/features/rec_002_0001.npz")["values"]
        b = np.load(tmp_path / "c2/features/rec_002_0001.npz")["values"]
        assert np.array_equal(a, b)

    def test_env_var_overrides_cache_dir(self, tmp_path, monkeypatch):
        fix_dir = tmp_path / "fix"
        main(
            [
                "make-fixtures",
                "--set", f"out_dir={fix_dir}",
                "--set", "fix_recordings=3",
                "--set", "fix_duration_s=8.0",
            ]
        )
        monkeypatch.setenv("OSD_CACHE_DIR", str(tmp_path / "envcache"))
        rc = main(
            [
                "prepare",
                "--set", f"manifest={fix_dir}/manifest.tsv",
                "--set", f"rttm_dir={fix_dir}/rttm",
                "--set", f"cache_dir={tmp_path}/ignored",
            ]
        )
        assert rc == EXIT_OK
        assert (tmp_path / "envcache/features").is_dir()
        assert not (tmp_path / "ignored").exists()


class TestStats:
    def test_table_has_tag_rows_and_total(self, corpus, capsys):
        rc = main(["stats"] + _common(corpus))
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        lines = [l for l in out.splitlines() if l.strip()]
        assert lines[0].startswith("Dataset")
        tags = {l.split()[0] for l in lines[1:]}
        assert {"train", "dev", "eval", "ALL"} <= tags

    def test_planted_ratio_recovered(self, corpus, capsys):
        main(["stats"] + _common(corpus))
        out = capsys.readouterr().out
        all_row = [l for l in out.splitlines() if l.startswith("ALL")][0]
        overlap_percent = float(all_row.split()[-1])
        assert abs(overlap_percent - 15.0) < 0.5

    def test_empty_manifest_errors(self, tmp_path, capsys):
        empty = tmp_path / "empty.tsv"
        empty.write_text("")
        rc = main(["stats", "--set", f"manifest={empty}"])
        assert rc == EXIT_DATA_ERROR

    def test_stats_rejects_mismatched_feature_config(self, corpus):
        rc = main(["stats"] + _common(corpus) + ["--set", "hop_s=0.02"])
        assert rc == EXIT_CONFIG_ERROR


TINY_MODEL = [
    "--set", "family=CF",
    "--set", "model_dim=8",
    "--set", "block_count=1",
    "--set", "head_count=2",
    "--set", "ffn_dim=16",
    "--set", "conv_kernel=7",
    "--set", "dropout=0.0",
]


class TestTrainEval:
    def test_train_then_eval(self, corpus, tmp_path_factory, capsys):
        out_dir = tmp_path_factory.mktemp("run")
        rc = main(
            ["train"]
            + _common(corpus)
            + TINY_MODEL
            + [
                "--set", f"out_dir={out_dir}",
                "--set", "max_epochs=2",
                "--set", "batch_size=2",
                "--set", "weights_mode=uniform",
            ]
        )
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        ckpt = out_dir / "cf_best.ckpt"
        assert ckpt.is_file()
        log_text = (out_dir / "train.log").read_text()
        assert "# class_weights=1.0,1.0,1.0" in log_text
        assert "stop_reason=" in log_text

        rc = main(
            ["eval"]
            + _common(corpus)
            + [
                "--set", f"checkpoint={ckpt}",
                "--set", f"out_dir={out_dir}",
            ]
        )
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        assert "Mean" in out
        assert (out_dir / "eval_report.txt").is_file()

    def test_eval_rejects_mismatched_digest(self, corpus, tmp_path_factory, capsys):
        out_dir = tmp_path_factory.mktemp("run2")
        rc = main(
            ["train"]
            + _common(corpus)
            + TINY_MODEL
            + [
                "--set", f"out_dir={out_dir}",
                "--set", "max_epochs=1",
                "--set", "batch_size=2",
                "--set", "weights_mode=uniform",
            ]
        )
        assert rc == EXIT_OK
        rc = main(
            ["eval"]
            + _common(corpus)
            + [
                "--set", f"checkpoint={out_dir}/cf_best.ckpt",
                "--set", "hop_s=0.02",
            ]
        )
        err = capsys.readouterr().err
        assert rc == EXIT_CONFIG_ERROR
        assert "digest" in err

    def test_eval_missing_tag_errors(self, corpus, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("run3")
        main(
            ["train"]
            + _common(corpus)
            + TINY_MODEL
            + [
                "--set", f"out_dir={out_dir}",
                "--set", "max_epochs=1",
                "--set", "batch_size=2",
                "--set", "weights_mode=uniform",
            ]
        )
        rc = main(
            ["eval"]
            + _common(corpus)
            + [
                "--set", f"checkpoint={out_dir}/cf_best.ckpt",
                "--set", "eval_tags=nosuchtag",
            ]
        )
        assert rc == EXIT_DATA_ERROR


class TestConfigHandling:
    def test_unknown_key_rejected(self):
        assert main(["stats", "--set", "no_such_key=1"]) == EXIT_CONFIG_ERROR

    def test_unknown_key_in_file_rejected(self, tmp_path):
        cfg = tmp_path / "bad.recipe"
        cfg.write_text("family=CF\nbogus_key=3\n")
        assert main(["stats", "--config", str(cfg)]) == EXIT_CONFIG_ERROR

    def test_malformed_set_rejected(self):
        assert main(["stats", "--set", "oops"]) == EXIT_CONFIG_ERROR

    def test_recipe_files_parse(self, corpus):
        for recipe in sorted(Path("recipes").glob("*.recipe")):
            rc = main(
                ["stats", "--config", str(recipe)]
                + _common(corpus)
            )
            assert rc == EXIT_OK, recipe

    def test_make_fixtures_determinism_via_cli(self, tmp_path, capsys):
        import hashlib

        digests = []
        for name in ("x", "y"):
            main(
                [
                    "make-fixtures",
                    "--set", f"out_dir={tmp_path}/{name}",
                    "--set", "fix_recordings=3",
                    "--set", "fix_duration_s=8.0",
                    "--seed", "7",
                ]
            )
            tree = {
                p.relative_to(tmp_path / name): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted((tmp_path / name).rglob("*"))
                if p.is_file()
            }
            digests.append(tree)
        assert digests[0] == digests[1]


class TestPartialSegments:
    def test_ten_second_recording_yields_two_full_one_partial(self, tmp_path):
        from scipy.io import wavfile as wf

        from osdkit.annotations import ManifestRecord, write_manifest
        from osdkit.annotations import load_labels
        from osdkit.features import AudioClip, segment

        rng = np.random.default_rng(0)
        x = rng.normal(0, 0.1, 10 * 16000)
        (tmp_path / "audio").mkdir()
        wf.write(str(tmp_path / "audio/rec.wav"), 16000, x.astype(np.float32))
        (tmp_path / "rttm").mkdir()
        (tmp_path / "rttm/rec.rttm").write_text(
            "SPEAKER rec 1 0.00 9.50 <NA> <NA> A <NA> <NA>\n"
        )
        spans = segment(AudioClip(x, source_id="rec"))
        records = [
            ManifestRecord(s.segment_id, "audio/rec.wav", s.start, s.end, "rec", "d")
            for s in spans
        ]
        write_manifest(tmp_path / "m.tsv", records)
        rc = main(
            [
                "prepare",
                "--set", f"manifest={tmp_path}/m.tsv",
                "--set", f"rttm_dir={tmp_path}/rttm",
                "--set", f"cache_dir={tmp_path}/cache",
            ]
        )
        assert rc == EXIT_OK
        assert len(records) == 3
        valid = []
        for r in records:
            feats = np.load(tmp_path / f"cache/features/{r.segment_id}.npz")
            lab = load_labels(tmp_path / "cache/labels", r.segment_id)
            assert feats["values"].shape == (64, 400)
            assert int(feats["valid_frames"]) == lab.valid_frames
            valid.append(lab.valid_frames)
        assert valid == [400, 400, 200]


class TestExitCodes:
    def test_divergence_maps_to_exit_4(self, corpus, monkeypatch):
        import osdkit.cli as cli_mod
        from osdkit.errors import EXIT_DIVERGED, TrainingDivergedError

        def boom(*args, **kwargs):
            raise TrainingDivergedError("non-finite loss at epoch 1")

        monkeypatch.setattr(cli_mod, "train", boom)
        rc = main(
            ["train"]
            + _common(corpus)
            + TINY_MODEL
            + ["--set", "max_epochs=1", "--set", "weights_mode=uniform"]
        )
        assert rc == EXIT_DIVERGED


def test_help_renders(capsys):
    # the stats help line contains a literal %, which argparse must not expand
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "%overlap" in out and "make-fixtures" in out


class TestAugmentedTraining:
    def test_train_with_waveform_augmentation(self, corpus, tmp_path_factory):
        out_dir = tmp_path_factory.mktemp("aug_run")
        rc = main(
            ["train"]
            + _common(corpus)
            + TINY_MODEL
            + [
                "--set", f"out_dir={out_dir}",
                "--set", "max_epochs=2",
                "--set", "batch_size=2",
                "--set", "weights_mode=uniform",
                "--set", "p_noise=0.8",
                "--set", "p_rir=0.8",
                "--set", f"noise_manifest={corpus['fix']}/noise_manifest.tsv",
                "--set", f"rir_manifest={corpus['fix']}/rir_manifest.tsv",
            ]
        )
        assert rc == EXIT_OK
        log_text = (out_dir / "train.log").read_text()
        assert "# augmented=True" in log_text
