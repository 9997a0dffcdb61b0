import pytest

from denoise_kge.kg import (
    KnowledgeGraph,
    TripleFormatError,
    add_reverse_relations,
    build_filter_index,
    chain_kg,
    load_triples,
    queries_from_split,
    synthetic_kg,
    write_triples,
)


@pytest.fixture
def triple_file(tmp_path):
    def make(text, name="train.txt"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    return make


def test_load_three_lines(triple_file):
    kg = load_triples(triple_file("a\tr\tb\nb\tr\tc\na\ts\tc\n"))
    assert kg.n_entities == 3
    assert kg.n_relations == 2
    assert kg.train == ((0, 0, 1), (1, 0, 2), (0, 1, 2))
    assert not kg.reverse_augmented


def test_load_empty_file(triple_file):
    kg = load_triples(triple_file(""))
    assert kg.entities == () and kg.relations == ()
    assert kg.train == kg.valid == kg.test == ()


def test_load_custom_separator_and_blank_lines(triple_file):
    kg = load_triples(triple_file("a,r,b\n\nb,r,c\n"), separator=",")
    assert kg.train == ((0, 0, 1), (1, 0, 2))


def test_first_appearance_order_across_splits(triple_file):
    train = triple_file("a\tr\tb\n", "train.txt")
    valid = triple_file("c\ts\ta\n", "valid.txt")
    test = triple_file("d\tr\tc\n", "test.txt")
    kg = load_triples(train, valid_path=valid, test_path=test)
    assert kg.entities == ("a", "b", "c", "d")
    assert kg.relations == ("r", "s")
    assert kg.valid == ((2, 1, 0),)
    assert kg.test == ((3, 0, 2),)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_triples(tmp_path / "nope.txt")


def test_malformed_line_reports_line_number(triple_file):
    with pytest.raises(TripleFormatError, match=":2:"):
        load_triples(triple_file("a\tr\tb\na\tr\n"))


def test_round_trip_preserves_indices(triple_file, tmp_path):
    kg = load_triples(triple_file("x\tp\ty\ny\tq\tz\nz\tp\tx\nw\tq\tx\n"))
    out = tmp_path / "again.txt"
    write_triples(kg, "train", out)
    again = load_triples(out)
    assert again.entities == kg.entities
    assert again.relations == kg.relations
    assert again.train == kg.train


def test_add_reverse_relations_doubles():
    kg = KnowledgeGraph(("a", "b", "c"), ("r0", "r1"), train=((0, 0, 1), (1, 0, 2), (0, 1, 2)))
    aug = add_reverse_relations(kg)
    assert aug.n_relations == 4
    assert len(aug.train) == 6
    assert (1, 2, 0) in aug.train
    assert aug.reverse_augmented
    aug.validate()


def test_add_reverse_relations_is_guarded():
    aug = add_reverse_relations(chain_kg(4, 1))
    with pytest.raises(ValueError):
        add_reverse_relations(aug)


def test_reverse_relation_count_237():
    rels = tuple(f"/rel/{i}" for i in range(237))
    kg = KnowledgeGraph(("a", "b"), rels, train=tuple((0, i, 1) for i in range(237)))
    assert add_reverse_relations(kg).n_relations == 474


def test_filter_index_single_and_duplicates():
    kg = add_reverse_relations(KnowledgeGraph(("a", "b"), ("r",), train=((0, 0, 1), (0, 0, 1))))
    idx = build_filter_index(kg)
    assert idx[(0, 0)] == {1}
    assert idx[(1, 1)] == {0}
    assert idx[(1, 0)] == frozenset()


def test_filter_index_unions_splits():
    kg = add_reverse_relations(
        KnowledgeGraph(("a", "b", "c"), ("r",), train=((0, 0, 1),), test=((0, 0, 2),))
    )
    assert build_filter_index(kg)[(0, 0)] == {1, 2}


def test_filter_index_requires_augmentation():
    with pytest.raises(ValueError):
        build_filter_index(chain_kg(3, 1))


def test_queries_two_per_fact():
    kg = synthetic_kg(30, 3, 100, seed=1)
    aug = add_reverse_relations(kg)
    qs = queries_from_split(aug, "test")
    assert len(qs) == 2 * len(kg.test)
    assert all(q.target == t for q, (_, _, t) in zip(qs, aug.test))


def test_every_query_target_is_in_filter():
    aug = add_reverse_relations(synthetic_kg(40, 4, 200, seed=3))
    idx = build_filter_index(aug)
    for split in ("train", "valid", "test"):
        for q in queries_from_split(aug, split):
            assert q.target in idx[(q.head, q.relation)]


def test_synthetic_kg_invariants():
    kg = synthetic_kg(100, 10, 1000, seed=0)
    kg.validate()
    assert len(kg.train) + len(kg.valid) + len(kg.test) == 1000
    assert synthetic_kg(100, 10, 1000, seed=0) == kg


def test_validate_catches_overlapping_splits():
    kg = KnowledgeGraph(("a", "b"), ("r",), train=((0, 0, 1),), test=((0, 0, 1),))
    with pytest.raises(ValueError, match="share"):
        kg.validate()
