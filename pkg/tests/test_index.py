import numpy as np
import pytest

from deltascan.detectors import DefectClass
from deltascan.encoder.embed import FunctionEmbedding
from deltascan.errors import CorruptFile, DimensionMismatch
from deltascan.index import (AnnIndex, EntryLabel, IndexEntry, decide_similar,
                             load_index, save_index)

DIM = 128


def _label(contract="C", ref="mint(address,uint256)", selector=b"\x40\xc1\x0f\x19",
           block_id=0, defect=DefectClass.BypassAuthReentrancy):
    return EntryLabel(contract, ref, selector, block_id, defect)


def _entry(vec, **kwargs):
    v = np.zeros(DIM, dtype=np.float32)
    v[:len(vec)] = vec
    return IndexEntry(0, v, _label(**kwargs))


def _clustered(count, seed=7, centers=40, sigma=0.4):
    """Clustered vectors: the regime the index actually serves (near-clone
    block embeddings), and the regime its recall is specified for."""
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal((centers, DIM)) * 3.0
    assign = rng.integers(0, centers, size=count)
    return (mu[assign] + sigma * rng.standard_normal((count, DIM))
            ).astype(np.float32)


def test_self_retrieval_distance_zero():
    index = AnnIndex(DIM)
    v = np.arange(DIM, dtype=np.float32)
    index.insert(IndexEntry(0, v, _label()))
    ((entry_id, dist),) = index.query(v, k=1)
    assert entry_id == 0
    assert dist <= 1e-9


def test_three_four_five_triangle():
    index = AnnIndex(DIM)
    index.insert(_entry([3.0, 4.0]))
    ((_, dist),) = index.query(np.zeros(DIM, dtype=np.float32), k=1)
    assert dist == pytest.approx(5.0, abs=1e-6)


def test_empty_index_query():
    assert AnnIndex(DIM).query(np.zeros(DIM, dtype=np.float32), k=3) == []


def test_k_larger_than_count():
    index = AnnIndex(DIM)
    for i in range(4):
        index.insert(_entry([float(i)], block_id=i))
    got = index.query(np.zeros(DIM, dtype=np.float32), k=100)
    assert len(got) == 4
    dists = [d for _, d in got]
    assert dists == sorted(dists)


def test_dimension_mismatch():
    index = AnnIndex(DIM)
    with pytest.raises(DimensionMismatch):
        index.insert(IndexEntry(0, np.zeros(3, dtype=np.float32), _label()))
    index.insert(_entry([1.0]))
    with pytest.raises(DimensionMismatch):
        index.query(np.zeros(5, dtype=np.float32))


def test_distances_match_linear_scan_values():
    vectors = _clustered(300)
    index = AnnIndex(DIM)
    for i, v in enumerate(vectors):
        index.insert(IndexEntry(0, v, _label(block_id=i)))
    rng = np.random.default_rng(1)
    for _ in range(20):
        probe = vectors[rng.integers(0, 300)] + \
            0.05 * rng.standard_normal(DIM).astype(np.float32)
        (top_id, top_dist) = index.query(probe, k=1)[0]
        exact = np.linalg.norm(vectors - probe, axis=1)
        assert top_dist == pytest.approx(float(exact[top_id]), abs=1e-5)


def test_recall_vs_linear_scan_1000():
    vectors = _clustered(1000)
    index = AnnIndex(DIM)
    for i, v in enumerate(vectors):
        index.insert(IndexEntry(0, v, _label(block_id=i)))
    rng = np.random.default_rng(2)
    probes = vectors[rng.integers(0, 1000, size=100)] + \
        0.1 * rng.standard_normal((100, DIM)).astype(np.float32)
    hits = 0
    for probe in probes:
        truth = int(np.argmin(np.linalg.norm(vectors - probe, axis=1)))
        got = index.query(probe, k=1, ef_search=64)[0][0]
        hits += int(got == truth)
    assert hits / 100 >= 0.99


def test_save_load_query_equivalence(tmp_path):
    vectors = _clustered(100, seed=4)
    index = AnnIndex(DIM)
    for i, v in enumerate(vectors):
        index.insert(IndexEntry(
            0, v, _label(contract=f"c{i % 5}", block_id=i)))
    path = tmp_path / "round.idx"
    save_index(index, path)
    loaded = load_index(path)
    assert len(loaded) == len(index)
    rng = np.random.default_rng(5)
    for _ in range(20):
        probe = rng.standard_normal(DIM).astype(np.float32)
        assert index.query(probe, k=5) == loaded.query(probe, k=5)
    # labels survive byte-exactly
    for a, b in zip(index.entries, loaded.entries):
        assert a.label == b.label
        assert a.vector.tobytes() == b.vector.tobytes()


def test_empty_index_round_trip(tmp_path):
    path = tmp_path / "empty.idx"
    save_index(AnnIndex(DIM), path)
    loaded = load_index(path)
    assert len(loaded) == 0
    assert loaded.query(np.zeros(DIM, dtype=np.float32)) == []


def test_insert_after_load_continues_rng_stream(tmp_path):
    a = AnnIndex(DIM, seed=9)
    b_vectors = _clustered(30, seed=6)
    for i, v in enumerate(b_vectors[:20]):
        a.insert(IndexEntry(0, v, _label(block_id=i)))
    path = tmp_path / "cont.idx"
    save_index(a, path)
    b = load_index(path)
    for i, v in enumerate(b_vectors[20:]):
        a.insert(IndexEntry(0, v, _label(block_id=20 + i)))
        b.insert(IndexEntry(0, v, _label(block_id=20 + i)))
    assert a._levels == b._levels
    probe = b_vectors[25]
    assert a.query(probe, k=3) == b.query(probe, k=3)


def test_corrupt_files_rejected(tmp_path):
    index = AnnIndex(DIM)
    index.insert(_entry([1.0]))
    path = tmp_path / "ok.idx"
    save_index(index, path)
    raw = path.read_bytes()

    bad = tmp_path / "magic.idx"
    bad.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CorruptFile):
        load_index(bad)

    trunc = tmp_path / "trunc.idx"
    trunc.write_bytes(raw[:-10])
    with pytest.raises(CorruptFile):
        load_index(trunc)

    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    corrupt = tmp_path / "bits.idx"
    corrupt.write_bytes(bytes(flipped))
    with pytest.raises(CorruptFile):
        load_index(corrupt)


def _query_fn(vectors, selector=b"\x40\xc1\x0f\x19"):
    vs = []
    for vec in vectors:
        v = np.zeros(DIM, dtype=np.float32)
        v[:len(vec)] = vec
        vs.append(v)
    return FunctionEmbedding((b"hash", selector), selector, tuple(vs))


def _populated_index(block_vecs, **label_kwargs):
    index = AnnIndex(DIM)
    for i, vec in enumerate(block_vecs):
        v = np.zeros(DIM, dtype=np.float32)
        v[:len(vec)] = vec
        index.insert(IndexEntry(0, v, _label(block_id=i, **label_kwargs)))
    return index


def test_decide_similar_self_match():
    index = _populated_index([[1.0], [0.0, 2.0]])
    findings = decide_similar(_query_fn([[1.0], [0.0, 2.0]]), index)
    assert len(findings) == 1
    f = findings[0]
    assert f.max_block_distance == 0.0
    assert f.defect_class is DefectClass.BypassAuthReentrancy
    assert f.matched_contract == "C"


def test_decide_similar_block_over_threshold():
    index = _populated_index([[1.0], [0.0, 2.0]])
    findings = decide_similar(_query_fn([[1.0], [0.0, 2.2]]), index,
                              threshold=0.1)
    assert findings == []


def test_decide_similar_selector_gate():
    index = _populated_index([[1.0]])
    same_vec_other_selector = _query_fn([[1.0]], selector=b"\x01\x02\x03\x04")
    assert decide_similar(same_vec_other_selector, index) == []
    anonymous = FunctionEmbedding((b"h", 0), None,
                                  (np.zeros(DIM, dtype=np.float32),))
    assert decide_similar(anonymous, index) == []


def test_decide_similar_threshold_monotonicity():
    index = _populated_index([[1.0], [0.0, 2.0]])
    query = _query_fn([[1.05], [0.0, 2.0]])
    matched = {}
    for t in (0.01, 0.1, 1.0, 2.0):
        matched[t] = {(f.matched_contract, f.matched_function)
                      for f in decide_similar(query, index, threshold=t)}
    assert matched[0.01] <= matched[0.1] <= matched[1.0] <= matched[2.0]
    assert not matched[0.01]
    assert matched[1.0]


def test_decide_similar_greedy_with_replacement():
    # two query blocks both nearest the same stored block: allowed
    index = _populated_index([[1.0]])
    findings = decide_similar(_query_fn([[1.0], [1.0]]), index)
    assert len(findings) == 1
    assert findings[0].block_distances == (0.0, 0.0)
