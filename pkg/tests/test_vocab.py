import numpy as np
import pytest
from sklearn.base import clone

from trajmine.vocab import (
    MASK_ID,
    N_RESERVED,
    PAD_ID,
    UNK_ID,
    GridTokenizer,
    Vocabulary,
    build_vocabulary,
    encode_locations,
)
from trajmine.world import CellId, GridLocation, ZoneId


@pytest.fixture
def trajset(small_world):
    # Two trajectories touching three zones and four cells.
    return [
        [GridLocation(0, 0, 0), GridLocation(10, 10, 0), GridLocation(300, 300, 0)],
        [GridLocation(10, 10, 0), GridLocation(100, 7, 1)],
    ]


class TestReservedIds:
    def test_values(self):
        assert (PAD_ID, UNK_ID, MASK_ID, N_RESERVED) == (0, 1, 2, 3)

    def test_real_tokens_start_after_reserved(self, small_world, trajset):
        vocab = build_vocabulary(trajset, small_world)
        first_zone = vocab.zone_token(ZoneId(0, 0, 0))
        first_cell = vocab.cell_token(CellId(0, 0, 0))
        assert first_zone == N_RESERVED
        assert first_cell == N_RESERVED


class TestBuildVocabulary:
    def test_first_appearance_order(self, small_world, trajset):
        vocab = build_vocabulary(trajset, small_world)
        # Cells in visit order: (0,0,0), (1,1,0), (37,37,0), (12,0,1).
        assert vocab.cells == (
            CellId(0, 0, 0),
            CellId(1, 1, 0),
            CellId(37, 37, 0),
            CellId(12, 0, 1),
        )
        assert vocab.zones == (ZoneId(0, 0, 0), ZoneId(1, 1, 0), ZoneId(0, 0, 1))
        assert [vocab.cell_token(c) for c in vocab.cells] == [3, 4, 5, 6]

    def test_duplicates_collapse(self, small_world):
        trajs = [[GridLocation(1, 1, 0)] * 5]
        vocab = build_vocabulary(trajs, small_world)
        assert len(vocab.cells) == 1
        assert len(vocab.zones) == 1

    def test_empty_input_rejected(self, small_world):
        with pytest.raises(ValueError, match="empty"):
            build_vocabulary([[], []], small_world)

    def test_unknown_maps_to_unk(self, small_world, trajset):
        vocab = build_vocabulary(trajset, small_world)
        assert vocab.zone_token(ZoneId(63, 63, 1)) == UNK_ID
        assert vocab.cell_token(CellId(63, 63, 1)) == UNK_ID

    def test_sizes_include_reserved(self, small_world, trajset):
        vocab = build_vocabulary(trajset, small_world)
        assert vocab.zone_vocab_size == N_RESERVED + len(vocab.zones)
        assert vocab.cell_vocab_size == N_RESERVED + len(vocab.cells)


class TestSerialization:
    def test_roundtrip(self, small_world, trajset, tmp_path):
        vocab = build_vocabulary(trajset, small_world)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        loaded = Vocabulary.load(path)
        assert loaded.zones == vocab.zones
        assert loaded.cells == vocab.cells
        assert loaded.zone_size == vocab.zone_size
        assert loaded.cell_size == vocab.cell_size
        assert loaded.sha256() == vocab.sha256()

    def test_sha_changes_with_content(self, small_world, trajset):
        v1 = build_vocabulary(trajset, small_world)
        v2 = build_vocabulary(trajset + [[GridLocation(400, 400, 0)]], small_world)
        assert v1.sha256() != v2.sha256()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("NOTVOCAB 1\nsizes 256 8\n")
        with pytest.raises(ValueError, match="bad magic"):
            Vocabulary.load(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("TMVOCAB 9\nsizes 256 8\n")
        with pytest.raises(ValueError, match="version"):
            Vocabulary.load(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("TMVOCAB 1\nsizes 256 8\nX 1 2 3\n")
        with pytest.raises(ValueError, match="malformed"):
            Vocabulary.load(path)


class TestEncodeLocations:
    def test_token_pairs(self, small_world, trajset):
        vocab = build_vocabulary(trajset, small_world)
        tokens = encode_locations(trajset[0], small_world, vocab)
        assert tokens.shape == (3, 2)
        assert tokens.dtype == np.int64
        for i, loc in enumerate(trajset[0]):
            assert tokens[i, 0] >= N_RESERVED
            assert tokens[i, 1] >= N_RESERVED


class TestGridTokenizer:
    def test_fit_transform(self, small_world, trajset):
        tok = GridTokenizer(world=small_world).fit(trajset)
        out = tok.transform(trajset)
        assert len(out) == 2
        assert out[0].shape == (3, 2)
        expect = encode_locations(trajset[1], small_world, tok.vocabulary_)
        assert np.array_equal(out[1], expect)

    def test_unseen_becomes_unk(self, small_world, trajset):
        tok = GridTokenizer(world=small_world).fit(trajset)
        # Zone (0, 1) on continent 0 was never visited: both tokens UNK.
        out = tok.transform([[GridLocation(10, 300, 0)]])
        assert out[0].tolist() == [[UNK_ID, UNK_ID]]
        # (500, 500) falls in the seen zone (1, 1) but an unseen cell.
        partial = tok.transform([[GridLocation(500, 500, 0)]])
        assert partial[0][0, 0] >= 3 and partial[0][0, 1] == UNK_ID

    def test_requires_world(self):
        with pytest.raises(ValueError, match="world"):
            GridTokenizer().fit([[GridLocation(0, 0, 0)]])

    def test_requires_fit_before_transform(self, small_world):
        with pytest.raises(ValueError, match="not fitted"):
            GridTokenizer(world=small_world).transform([[]])

    def test_sklearn_params_and_clone(self, small_world, trajset):
        tok = GridTokenizer(world=small_world)
        assert tok.get_params()["world"] is small_world
        cloned = clone(tok)
        assert cloned.get_params()["world"] == small_world
        assert not hasattr(cloned, "vocabulary_")
