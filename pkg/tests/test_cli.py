import json

import numpy as np
import pytest

from afasnet.checkpoint import load_checkpoint
from afasnet.cli import main
from afasnet.wavio import read_wav, write_wav

TINY = {
    "simulate": {"n_mics": 2, "seconds": 0.25},
    "beamformer": {
        "n_channels": 2,
        "feature_dim": 8,
        "compress_hidden": 8,
        "dprnn_feature": 8,
        "dprnn_hidden": 8,
        "n_dprnn_blocks": 1,
        "dprnn_chunk_len": 8,
        "attention_heads": 1,
        "attention_dim": 4,
        "decompress_hidden": 8,
    },
    "enhancer": {"conv_channels": [2, 2], "conv_kernels": [[3, 5], [3, 5]], "lstm_hidden": 8},
    "train": {"epochs": 1, "batch_size": 2},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    common = ["--config", str(cfg), "--seed", "3"]
    assert main(["simulate", "--out", str(root / "data"), "--count", "3", *common]) == 0
    assert main(["train-beamformer", "--data", str(root / "data"), "--out", str(root / "bf.ckpt"), *common]) == 0
    assert (
        main(
            [
                "train-enhancer",
                "--data",
                str(root / "data"),
                "--beamformer",
                str(root / "bf.ckpt"),
                "--out",
                str(root / "enh.ckpt"),
                *common,
            ]
        )
        == 0
    )
    return root, common


class TestCommands:
    def test_simulate_outputs(self, workspace):
        root, _ = workspace
        names = sorted(p.name for p in (root / "data").iterdir())
        assert names[:3] == ["ex00000.json", "ex00000_mix.wav", "ex00000_target.wav"]
        assert read_wav(root / "data" / "ex00000_mix.wav").shape == (2, 4000)

    def test_simulate_byte_identical(self, workspace, tmp_path):
        root, common = workspace
        assert main(["simulate", "--out", str(tmp_path), "--count", "3", *common]) == 0
        for p in (root / "data").iterdir():
            assert (tmp_path / p.name).read_bytes() == p.read_bytes()

    def test_training_byte_identical(self, workspace, tmp_path):
        root, common = workspace
        out = tmp_path / "bf.ckpt"
        assert main(["train-beamformer", "--data", str(root / "data"), "--out", str(out), *common]) == 0
        assert out.read_bytes() == (root / "bf.ckpt").read_bytes()

    def test_enhance_keeps_duration(self, workspace, tmp_path):
        root, _ = workspace
        src = tmp_path / "in.wav"
        write_wav(np.random.default_rng(0).uniform(-0.3, 0.3, (2, 5123)), src)
        out = tmp_path / "out.wav"
        args = ["enhance", str(src), str(out), "--beamformer", str(root / "bf.ckpt")]
        assert main([*args, "--enhancer", str(root / "enh.ckpt")]) == 0
        assert read_wav(out).shape == (5123,)
        assert main([*args, "--skip-enhancer"]) == 0
        assert read_wav(out).shape == (5123,)

    def test_evaluate_report(self, workspace, tmp_path, capsys):
        root, common = workspace
        report = tmp_path / "r.json"
        args = ["evaluate", "--data", str(root / "data"), "--beamformer", str(root / "bf.ckpt"), "--report", str(report)]
        assert main([*args, "--enhancer", str(root / "enh.ckpt"), "--config", common[1]]) == 0
        doc = json.loads(report.read_text())
        assert len(doc["rows"]) == 3
        assert "si_snr_enh" in doc["rows"][0]
        assert "si_snr_out" in capsys.readouterr().out

    def test_info(self, workspace, capsys):
        root, _ = workspace
        assert main(["info", str(root / "bf.ckpt")]) == 0
        out = capsys.readouterr().out
        n = load_checkpoint(root / "bf.ckpt").n_parameters()
        assert f"parameters: {n}" in out
        assert "kind: beamformer" in out


class TestExitCodes:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1

    def test_unknown_option(self):
        with pytest.raises(SystemExit) as info:
            main(["info", "--bogus", "x"])
        assert info.value.code == 1

    def test_conflicting_enhancer_flags(self, workspace, tmp_path):
        root, _ = workspace
        args = ["enhance", "a.wav", str(tmp_path / "o.wav"), "--beamformer", str(root / "bf.ckpt")]
        assert main([*args, "--enhancer", str(root / "enh.ckpt"), "--skip-enhancer"]) == 1
        assert main(args) == 1

    def test_missing_file_is_runtime_error(self, tmp_path, capsys):
        assert main(["info", str(tmp_path / "nope.ckpt")]) == 2
        assert "FileNotFoundError" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, workspace, tmp_path, capsys):
        root, _ = workspace
        blob = bytearray((root / "bf.ckpt").read_bytes())
        blob[100] ^= 0xFF
        (tmp_path / "bad.ckpt").write_bytes(bytes(blob))
        assert main(["info", str(tmp_path / "bad.ckpt")]) == 2
        assert "checksum" in capsys.readouterr().err

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"simulate": {"n_mic": 2}}')
        assert main(["simulate", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2

    def test_channel_mismatch(self, workspace, tmp_path):
        root, _ = workspace
        src = tmp_path / "in.wav"
        write_wav(np.zeros((3, 1000)), src)
        assert main(["enhance", str(src), str(tmp_path / "o.wav"), "--beamformer", str(root / "bf.ckpt"), "--skip-enhancer"]) == 2
