import json

import numpy as np

from model_export import DEFAULT_GOLDEN_TEXTS, emit_golden


def read_records(path):
    return [
        json.loads(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


class TestEmitGolden:
    def test_one_record_per_text_with_all_fields(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        count = emit_golden(encoder, ["red car", "old car"], out)
        assert count == 2
        records = read_records(out)
        assert [r["text"] for r in records] == ["red car", "old car"]
        for record in records:
            assert set(record) == {
                "text",
                "vector",
                "encoder_id",
                "token_ids",
                "truncated",
            }

    def test_vectors_round_trip_the_encoder_exactly(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        emit_golden(encoder, ["red car"], out)
        (record,) = read_records(out)
        stored = np.asarray(record["vector"], dtype=np.float64)
        assert np.array_equal(stored, encoder.embed("red car"))

    def test_token_ids_and_truncation_match_the_tokenizer(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        long_text = " ".join(["a"] * 80)
        emit_golden(encoder, ["red car", long_text], out)
        short, long = read_records(out)
        ids, truncated = encoder.encode_ids("red car")
        assert short["token_ids"] == ids and short["truncated"] is truncated
        ids, truncated = encoder.encode_ids(long_text)
        assert long["token_ids"] == ids and long["truncated"] is True

    def test_records_carry_the_encoder_identity(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        emit_golden(encoder, ["red car"], out)
        (record,) = read_records(out)
        assert record["encoder_id"] == encoder.encoder_id
        assert record["encoder_id"].startswith("test-")

    def test_vectors_are_unit_norm(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        emit_golden(encoder, list(DEFAULT_GOLDEN_TEXTS), out)
        for record in read_records(out):
            norm = float(np.linalg.norm(np.asarray(record["vector"])))
            assert abs(norm - 1.0) < 1e-9

    def test_emission_is_byte_deterministic(self, encoder, tmp_path):
        a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
        emit_golden(encoder, list(DEFAULT_GOLDEN_TEXTS), a)
        emit_golden(encoder, list(DEFAULT_GOLDEN_TEXTS), b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_text_list_writes_an_empty_file(self, encoder, tmp_path):
        out = tmp_path / "golden.ndjson"
        assert emit_golden(encoder, [], out) == 0
        assert out.read_bytes() == b""

    def test_default_set_exercises_truncation(self):
        assert any(len(t.split()) > 77 for t in DEFAULT_GOLDEN_TEXTS)
