"""Tests for the command line: happy paths, flag validation, exit codes."""

import numpy as np
import pytest

from vnsc import dsp
from vnsc.bitstream import read_bitstream
from vnsc.cli import main
from vnsc.data import write_toy_dataset
from vnsc.serialization import load_parameters, save_parameters
from vnsc.training import load_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Toy dataset plus trained audio and va checkpoints, shared per module."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    write_toy_dataset(data, n_items=2, n_samples=4800, seed=11)
    assert main(["train", "--data", str(data), "--out", str(root / "audio_ckpt"),
                 "--scenario", "audio", "--miniature", "--steps", "2", "--quiet"]) == 0
    assert main(["train", "--data", str(data), "--out", str(root / "va_ckpt"),
                 "--scenario", "va", "--miniature", "--steps", "2", "--quiet"]) == 0
    return root


class TestTrain:
    def test_emits_loss_lines_and_summary(self, workdir, capsys):
        out = workdir / "fresh_ckpt"
        code = main(["train", "--data", str(workdir / "data"), "--out", str(out),
                     "--scenario", "audio", "--miniature", "--steps", "2"])
        lines = capsys.readouterr().out.strip().splitlines()
        assert code == 0
        step_lines = [l for l in lines if l.startswith("step=")]
        assert len(step_lines) == 2
        pairs = dict(part.split("=") for part in step_lines[0].split())
        assert {"step", "lr", "l_mdct", "l_mel", "l_quant", "total"} <= set(pairs)
        assert lines[-1].startswith("checkpoint=")

    def test_resume_continues_counting(self, workdir, capsys):
        out = workdir / "resume_ckpt"
        assert main(["train", "--data", str(workdir / "data"), "--out", str(out),
                     "--scenario", "audio", "--miniature", "--steps", "2",
                     "--quiet"]) == 0
        capsys.readouterr()
        assert main(["train", "--data", str(workdir / "data"), "--out", str(out),
                     "--resume", "--steps", "1", "--quiet"]) == 0
        assert "steps=3" in capsys.readouterr().out

    def test_resume_without_checkpoint_is_usage_error(self, workdir, capsys):
        code = main(["train", "--data", str(workdir / "data"),
                     "--out", str(workdir / "nowhere"), "--resume"])
        assert code == 2
        assert "resume" in capsys.readouterr().err

    def test_empty_data_dir_is_ingestion_error(self, workdir, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path), "--out",
                     str(workdir / "x"), "--miniature"])
        assert code == 3
        assert "no .wav" in capsys.readouterr().err

    def test_bad_config_file_is_usage_error(self, workdir, tmp_path, capsys):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("bogus_key=1\n")
        code = main(["train", "--data", str(workdir / "data"), "--out",
                     str(workdir / "y"), "--config", str(cfg)])
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_numerical_failure_exits_4(self, workdir, tmp_path, capsys):
        # poison a checkpoint with NaN weights and resume one step
        import shutil
        broken = tmp_path / "broken"
        shutil.copytree(workdir / "audio_ckpt", broken)
        state = load_parameters(broken / "model.vnscparm")
        state["decoder.post_conv.weight"][:] = np.nan
        save_parameters(broken / "model.vnscparm", state)
        code = main(["train", "--data", str(workdir / "data"), "--out", str(broken),
                     "--resume", "--steps", "1", "--quiet"])
        assert code == 4
        assert "l_mdct" in capsys.readouterr().err


class TestEncodeDecode:
    def test_round_trip(self, workdir, tmp_path, capsys):
        wav = str(workdir / "data" / "item_000.wav")
        coded = tmp_path / "a.vnscbits"
        out = tmp_path / "a.wav"
        assert main(["encode", "--model", str(workdir / "audio_ckpt"),
                     "--in", wav, "--out", str(coded)]) == 0
        assert "bit/s" in capsys.readouterr().out
        assert main(["decode", "--model", str(workdir / "audio_ckpt"),
                     "--in", str(coded), "--out", str(out)]) == 0
        decoded = dsp.read_wav(out)
        indices, header = read_bitstream(coded)
        assert header.mode == "audio"
        assert decoded.samples.size == (header.n_frames * header.downsample_factor - 1) * 40

    def test_encode_is_deterministic(self, workdir, tmp_path):
        wav = str(workdir / "data" / "item_000.wav")
        a, b = tmp_path / "a.bits", tmp_path / "b.bits"
        main(["encode", "--model", str(workdir / "audio_ckpt"), "--in", wav, "--out", str(a)])
        main(["encode", "--model", str(workdir / "audio_ckpt"), "--in", wav, "--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_noise_is_seeded(self, workdir, tmp_path):
        wav = str(workdir / "data" / "item_000.wav")
        a, b, c = (tmp_path / n for n in ("a.bits", "b.bits", "c.bits"))
        base = ["encode", "--model", str(workdir / "audio_ckpt"), "--in", wav,
                "--noise-snr", "5"]
        main(base + ["--out", str(a), "--seed", "1"])
        main(base + ["--out", str(b), "--seed", "1"])
        main(base + ["--out", str(c), "--seed", "2"])
        assert a.read_bytes() == b.read_bytes()
        assert a.read_bytes() != c.read_bytes()

    def test_va_needs_lips(self, workdir, tmp_path, capsys):
        wav = str(workdir / "data" / "item_000.wav")
        code = main(["encode", "--model", str(workdir / "va_ckpt"),
                     "--in", wav, "--out", str(tmp_path / "x.bits")])
        assert code == 2
        assert "--lips" in capsys.readouterr().err

    def test_va_encodes_with_lips(self, workdir, tmp_path):
        assert main(["encode", "--model", str(workdir / "va_ckpt"),
                     "--in", str(workdir / "data" / "item_000.wav"),
                     "--lips", str(workdir / "data" / "item_000.lips"),
                     "--out", str(tmp_path / "va.bits")]) == 0
        _, header = read_bitstream(tmp_path / "va.bits")
        assert header.mode == "va"

    def test_audio_model_rejects_lips(self, workdir, tmp_path, capsys):
        code = main(["encode", "--model", str(workdir / "audio_ckpt"),
                     "--in", str(workdir / "data" / "item_000.wav"),
                     "--lips", str(workdir / "data" / "item_000.lips"),
                     "--out", str(tmp_path / "x.bits")])
        assert code == 2
        assert "--lips" in capsys.readouterr().err

    def test_missing_input_is_ingestion_error(self, workdir, tmp_path):
        code = main(["encode", "--model", str(workdir / "audio_ckpt"),
                     "--in", str(tmp_path / "missing.wav"),
                     "--out", str(tmp_path / "x.bits")])
        assert code == 3

    def test_decode_with_wrong_model_is_rejected(self, workdir, tmp_path, capsys):
        # a va stream must not decode through the audio checkpoint silently
        coded = tmp_path / "va.bits"
        main(["encode", "--model", str(workdir / "va_ckpt"),
              "--in", str(workdir / "data" / "item_000.wav"),
              "--lips", str(workdir / "data" / "item_000.lips"), "--out", str(coded)])
        code = main(["decode", "--model", str(workdir / "audio_ckpt"),
                     "--in", str(coded), "--out", str(tmp_path / "x.wav")])
        assert code == 3
        assert "mode" in capsys.readouterr().err

    def test_decode_garbage_is_format_error(self, workdir, tmp_path):
        junk = tmp_path / "junk.bits"
        junk.write_bytes(b"not a bitstream at all")
        code = main(["decode", "--model", str(workdir / "audio_ckpt"),
                     "--in", str(junk), "--out", str(tmp_path / "x.wav")])
        assert code == 3


class TestEval:
    def test_reports_per_item_and_mean(self, workdir, capsys):
        assert main(["eval", "--model", str(workdir / "audio_ckpt"),
                     "--data", str(workdir / "data")]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert sum(l.startswith("item=") for l in lines) == 2
        assert lines[-1].startswith("mean_ssnr=")
        assert "bitrate=900" in lines[-1]

    def test_eval_with_noise(self, workdir, capsys):
        assert main(["eval", "--model", str(workdir / "audio_ckpt"),
                     "--data", str(workdir / "data"), "--noise-snr", "10"]) == 0
        assert "mean_ssnr=" in capsys.readouterr().out


class TestUsage:
    def test_no_command_is_usage_error(self, capsys):
        assert main([]) == 2

    def test_unknown_command_is_usage_error(self, capsys):
        assert main(["transmogrify"]) == 2

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "encode" in capsys.readouterr().out


class TestLoadedCheckpoints:
    def test_cli_checkpoint_loads_as_model(self, workdir):
        model = load_model(workdir / "audio_ckpt")
        assert model.cfg.scenario == "audio"
        assert model.books is not None
