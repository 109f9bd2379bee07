import json

from conftest import HAS_ONNX
from model_export.cli import EXIT_ERROR, EXIT_MISSING_DEPENDENCY, EXIT_OK, main

import pytest


class TestBundleCommand:
    def test_writes_tokenizer_manifest_and_goldens(self, tmp_path, capsys):
        out = tmp_path / "bundle"
        code = main(["bundle", "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "vocab.json").is_file()
        assert (out / "merges.txt").is_file()
        assert (out / "manifest.json").is_file()
        assert (out / "golden.ndjson").is_file()
        assert not (out / "encoder.onnx").exists()
        assert "wrote bundle" in capsys.readouterr().out

    def test_manifest_declares_no_model_file(self, tmp_path):
        out = tmp_path / "bundle"
        main(["bundle", "--out", str(out)])
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["model_file"] is None
        assert manifest["encoder_id"].startswith("test-")

    def test_bundles_are_reproducible(self, tmp_path):
        main(["bundle", "--out", str(tmp_path / "a")])
        main(["bundle", "--out", str(tmp_path / "b")])
        for name in ("vocab.json", "merges.txt", "manifest.json", "golden.ndjson"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_seed_changes_the_golden_vectors(self, tmp_path):
        main(["bundle", "--out", str(tmp_path / "a"), "--seed", "0"])
        main(["bundle", "--out", str(tmp_path / "b"), "--seed", "7"])
        a = (tmp_path / "a" / "golden.ndjson").read_bytes()
        b = (tmp_path / "b" / "golden.ndjson").read_bytes()
        assert a != b


class TestGoldenCommand:
    def test_custom_texts_file(self, tmp_path, capsys):
        texts = tmp_path / "texts.txt"
        texts.write_text("red car\nold car\n", encoding="utf-8")
        out = tmp_path / "golden.ndjson"
        code = main(["golden", "--out", str(out), "--texts", str(texts)])
        assert code == EXIT_OK
        assert "wrote 2 golden records" in capsys.readouterr().out
        lines = out.read_text(encoding="utf-8").splitlines()
        assert [json.loads(l)["text"] for l in lines] == ["red car", "old car"]

    def test_missing_texts_file_is_a_usage_error(self, tmp_path, capsys):
        code = main(
            ["golden", "--out", str(tmp_path / "g.ndjson"), "--texts", "/no/such"]
        )
        assert code == EXIT_ERROR
        assert "not found" in capsys.readouterr().err


@pytest.mark.skipif(HAS_ONNX, reason="onnx is installed; the gate cannot fire")
class TestExportCommandWithoutOnnx:
    def test_reports_the_missing_extra_and_exits_3(self, tmp_path, capsys):
        code = main(["export", "--out", str(tmp_path / "export")])
        assert code == EXIT_MISSING_DEPENDENCY
        assert "model-export[onnx]" in capsys.readouterr().err
