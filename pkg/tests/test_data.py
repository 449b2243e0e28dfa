import numpy as np
import pytest

from svbackend.data import (EmbeddingSet, SampleMeta, ScoreSet, Trial,
                            read_embeddings, read_metadata, read_scores,
                            read_trials, write_embeddings, write_metadata,
                            write_scores, write_trials)
from svbackend.errors import DataFormatError


def small_set(n=3, dim=4, seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    # float32-representable values so the binary round trip is bit-exact
    vecs = rng.standard_normal((n, dim)).astype(np.float32).astype(np.float64)
    return EmbeddingSet([f"s{i}" for i in range(n)], vecs)


class TestBinaryFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        emb = small_set(3, 4)
        path = tmp_path / "e.emb"
        write_embeddings(emb, path, "binary")
        back = read_embeddings(path, "binary")
        assert back.ids == emb.ids
        assert back.dim == 4 and len(back) == 3
        assert np.array_equal(back.vectors, emb.vectors)

    def test_file_round_trip_byte_identical(self, tmp_path):
        emb = small_set(5, 3, seed=2)
        p1, p2 = tmp_path / "a.emb", tmp_path / "b.emb"
        write_embeddings(emb, p1, "binary")
        write_embeddings(read_embeddings(p1, "binary"), p2, "binary")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.emb"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="magic"):
            read_embeddings(p, "binary")

    def test_truncated_matrix(self, tmp_path):
        emb = small_set(2, 4)
        p = tmp_path / "t.emb"
        write_embeddings(emb, p, "binary")
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(DataFormatError, match="matrix bytes"):
            read_embeddings(p, "binary")

    def test_empty_file_no_samples(self, tmp_path):
        p = tmp_path / "z.emb"
        import struct
        p.write_bytes(b"EMB1" + struct.pack("<II", 0, 4))
        with pytest.raises(DataFormatError, match="no samples"):
            read_embeddings(p, "binary")


class TestTsvFormat:
    def test_round_trip_value_exact(self, tmp_path):
        rng = np.random.Generator(np.random.PCG64(7))
        emb = EmbeddingSet(["a", "b"], rng.standard_normal((2, 6)))
        p = tmp_path / "e.tsv"
        write_embeddings(emb, p, "tsv")
        back = read_embeddings(p, "tsv")
        assert np.array_equal(back.vectors, emb.vectors)

    def test_row_length_error_names_row(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("sample_id\tv0\tv1\tv2\tv3\n"
                     "a\t1\t2\t3\t4\n"
                     "b\t1\t2\t3\n")
        with pytest.raises(DataFormatError, match="row 2"):
            read_embeddings(p, "tsv")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.tsv"
        p.write_text("")
        with pytest.raises(DataFormatError, match="no samples"):
            read_embeddings(p, "tsv")

    def test_duplicate_sample_id(self, tmp_path):
        p = tmp_path / "dup.tsv"
        p.write_text("sample_id\tv0\na\t1\na\t2\n")
        with pytest.raises(DataFormatError, match="duplicate"):
            read_embeddings(p, "tsv")

    def test_non_finite_rejected(self, tmp_path):
        p = tmp_path / "nan.tsv"
        p.write_text("sample_id\tv0\na\tnan\n")
        with pytest.raises(DataFormatError):
            read_embeddings(p, "tsv")


class TestTrials:
    def test_tgt_token(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("a\tb\ttgt\n")
        assert read_trials(p) == [Trial("a", "b", "target")]

    def test_imp_token(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("a\tb\timp\n")
        assert read_trials(p) == [Trial("a", "b", "impostor")]

    def test_unknown_token(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("a\tb\tfoo\n")
        with pytest.raises(DataFormatError, match="unknown label"):
            read_trials(p)

    def test_round_trip(self, tmp_path):
        trials = [Trial("a", "b", "target"), Trial("a", "c", "impostor")]
        p = tmp_path / "t.tsv"
        write_trials(trials, p)
        assert read_trials(p) == trials


class TestScores:
    def test_round_trip_value_exact(self, tmp_path):
        trials = [Trial("a", "b", "target"), Trial("a", "c", "impostor")]
        ss = ScoreSet(trials, np.array([0.12345678901234567, -3.5]), kind="llr")
        p = tmp_path / "s.tsv"
        write_scores(ss, p)
        back = read_scores(p)
        assert back.trials == trials
        assert np.array_equal(back.scores, ss.scores)

    def test_parallel_length_enforced(self):
        with pytest.raises(DataFormatError):
            ScoreSet([Trial("a", "b", "target")], np.array([1.0, 2.0]))

    def test_non_finite_rejected(self):
        with pytest.raises(DataFormatError):
            ScoreSet([Trial("a", "b", "target")], np.array([np.inf]))


class TestMetadata:
    def test_round_trip_preserves_order_and_fields(self, tmp_path):
        meta = {
            "s1": SampleMeta("s1", "spk1", "sess1", "domA", "clean"),
            "s0": SampleMeta("s0", "spk0", "sess0", "domB", "noisy"),
        }
        p = tmp_path / "m.tsv"
        write_metadata(meta, p)
        back = read_metadata(p)
        assert list(back) == list(meta)
        assert back == meta

    def test_missing_metadata_rejected_when_required(self):
        emb = small_set(2)
        meta = {"s0": SampleMeta("s0", "spk", "sess", "d", "c")}
        with pytest.raises(DataFormatError, match="missing metadata"):
            emb.with_metadata(meta)
        ok = emb.with_metadata(meta, require_complete=False)
        assert "s0" in ok.meta and "s1" not in ok.meta

    def test_empty_field_rejected(self):
        with pytest.raises(DataFormatError):
            SampleMeta("s", "", "sess", "d", "c")

    def test_column_count_checked(self, tmp_path):
        p = tmp_path / "m.tsv"
        p.write_text("a\tb\tc\n")
        with pytest.raises(DataFormatError, match="line 1"):
            read_metadata(p)


def test_loading_never_drops_rows(tmp_path):
    emb = small_set(17, 5, seed=5)
    p = tmp_path / "e.emb"
    write_embeddings(emb, p, "binary")
    assert len(read_embeddings(p, "binary")) == 17
