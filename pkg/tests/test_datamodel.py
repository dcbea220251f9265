import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqrep.datamodel import (
    DataSetContainer,
    Instance,
    container_from_bytes,
    container_to_bytes,
    fuse_features,
    generate_stratified_folds,
    import_audio_directory,
    load_container,
    read_metadata_table,
    save_container,
)
from seqrep.dsp import AudioBuffer, write_wav
from seqrep.errors import (
    CorruptContainerError,
    DuplicateInstanceError,
    FusionMismatchError,
    InvalidArgumentError,
    MetadataConflictError,
    SeqrepIOError,
    ShapeError,
    VersionMismatchError,
)


def touch_wav(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(path, AudioBuffer(np.zeros(800), 8000))


def features(ids, dim, seed=0, labels=None, **meta):
    rng = np.random.default_rng(seed)
    labels = labels or [None] * len(ids)
    insts = [Instance(i, rng.normal(size=dim), lab, meta.get("partition"), meta.get("fold"))
             for i, lab in zip(ids, labels)]
    return DataSetContainer("features", dim, insts)


# -- directory import -----------------------------------------------------------------------

def test_parent_dir_labels(tmp_path):
    for rel in ["dog/b.wav", "cat/a.wav", "dog/a.WAV", "notes.txt", "loose.wav"]:
        if rel.endswith("txt"):
            (tmp_path / rel).write_text("x")
        else:
            touch_wav(tmp_path / rel)
    res = import_audio_directory(tmp_path)
    assert [(e.instance_id, e.label) for e in res.entries] == [
        ("cat/a.wav", "cat"), ("dog/a.WAV", "dog"), ("dog/b.wav", "dog"), ("loose.wav", None)]


def test_nested_dirs_use_immediate_parent(tmp_path):
    touch_wav(tmp_path / "a" / "b" / "x.wav")
    res = import_audio_directory(tmp_path)
    assert res.entries[0].instance_id == "a/b/x.wav" and res.entries[0].label == "b"


def test_no_labels(tmp_path):
    touch_wav(tmp_path / "dog" / "x.wav")
    assert import_audio_directory(tmp_path, "none").entries[0].label is None


def test_empty_directory(tmp_path):
    assert import_audio_directory(tmp_path).entries == []


def test_missing_directory(tmp_path):
    with pytest.raises(SeqrepIOError):
        import_audio_directory(tmp_path / "nope")


def test_ids_sorted_by_utf8_bytes(tmp_path):
    for name in ["é.wav", "z.wav", "A.wav", "a.wav"]:
        touch_wav(tmp_path / name)
    ids = [e.instance_id for e in import_audio_directory(tmp_path).entries]
    assert ids == sorted(ids, key=lambda s: s.encode("utf-8"))
    assert ids == ["A.wav", "a.wav", "z.wav", "é.wav"]


def test_metadata_inner_join(tmp_path):
    audio = tmp_path / "audio"
    touch_wav(audio / "one.wav")
    touch_wav(audio / "two.wav")
    touch_wav(audio / "extra.wav")
    table = tmp_path / "meta.csv"
    table.write_text("id,label,partition,fold\none.wav,yes,train,0\ntwo.wav,no,devel,1\ngone.wav,yes,test,\n")
    res = import_audio_directory(audio, "metadata", table)
    assert [(e.instance_id, e.label, e.partition, e.fold) for e in res.entries] == [
        ("one.wav", "yes", "train", 0), ("two.wav", "no", "devel", 1)]
    assert res.warnings == 1 and res.dangling == ["gone.wav"]
    assert res.unlisted == ["extra.wav"]


def test_metadata_tab_separated(tmp_path):
    table = tmp_path / "m.tsv"
    table.write_text("id\tlabel\nx.wav\tfoo\n")
    assert read_metadata_table(table) == {"x.wav": {"label": "foo", "partition": None, "fold": None}}


@pytest.mark.parametrize("text,err", [
    ("id,label\na,x\na,y\n", DuplicateInstanceError),
    ("name,label\na,x\n", InvalidArgumentError),
    ("id,colour\na,x\n", InvalidArgumentError),
    ("id,partition\na,validation\n", InvalidArgumentError),
    ("id,fold\na,two\n", InvalidArgumentError),
    ("", InvalidArgumentError),
])
def test_metadata_errors(tmp_path, text, err):
    table = tmp_path / "m.csv"
    table.write_text(text)
    with pytest.raises(err):
        read_metadata_table(table)


# -- containers ---------------------------------------------------------------------------------

def test_container_validation():
    with pytest.raises(DuplicateInstanceError):
        features(["a", "a"], 2)
    with pytest.raises(ShapeError):
        DataSetContainer("features", 3, [Instance("a", np.zeros(2))])
    with pytest.raises(ShapeError):
        DataSetContainer("spectrogram", 3, [Instance("a", np.zeros((0, 3)))])
    with pytest.raises(InvalidArgumentError):
        DataSetContainer("features", 2, [Instance("a", np.zeros(2), partition="dev")])
    with pytest.raises(InvalidArgumentError):
        DataSetContainer("images", 2)
    with pytest.raises(InvalidArgumentError):
        DataSetContainer("features", 2, [Instance("a", np.zeros(2), fold=3)], num_folds=2)


def test_num_folds_inferred():
    c = DataSetContainer("features", 1, [Instance("a", [0], fold=0), Instance("b", [1], fold=2)])
    assert c.num_folds == 3


def test_empty_round_trip(tmp_path):
    c = DataSetContainer("features", 7)
    save_container(c, tmp_path / "e.adrl")
    back = load_container(tmp_path / "e.adrl")
    assert back == c and len(back) == 0 and back.matrix().shape == (0, 7)


def test_random_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    insts = [Instance(f"dir/{k:03d}.wav", rng.normal(size=(int(rng.integers(1, 30)), 16)),
                      ["a", "b", None][k % 3], [None, "train", "devel", "test"][k % 4], k % 5)
             for k in range(100)]
    c = DataSetContainer("spectrogram", 16, insts, attrs={"config": {"window_ms": 80}})
    save_container(c, tmp_path / "r.adrl")
    back = load_container(tmp_path / "r.adrl")
    assert back == c
    assert container_to_bytes(back) == container_to_bytes(c)
    assert oct((tmp_path / "r.adrl").stat().st_mode & 0o777) == "0o644"


finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@settings(max_examples=50, deadline=None)
@given(data=st.data(), dim=st.integers(1, 5), n=st.integers(0, 6))
def test_round_trip_property(data, dim, n):
    insts = []
    for k in range(n):
        T = data.draw(st.integers(1, 4))
        vals = data.draw(st.lists(finite32, min_size=T * dim, max_size=T * dim))
        label = data.draw(st.one_of(st.none(), st.text(min_size=1, max_size=5)))
        insts.append(Instance(f"id{k}", np.array(vals, dtype=np.float32).reshape(T, dim), label))
    c = DataSetContainer("spectrogram", dim, insts)
    assert container_from_bytes(container_to_bytes(c)) == c


def test_corrupt_container(tmp_path):
    data = container_to_bytes(features(["a", "b"], 3))
    with pytest.raises(CorruptContainerError):
        container_from_bytes(data[:-3])
    with pytest.raises(CorruptContainerError):
        container_from_bytes(b"XXXX" + data[4:])
    bad = bytearray(data)
    bad[-8] ^= 1
    with pytest.raises(CorruptContainerError):
        container_from_bytes(bytes(bad))
    (tmp_path / "c.adrl").write_bytes(data[:10])
    with pytest.raises(CorruptContainerError, match="c.adrl"):
        load_container(tmp_path / "c.adrl")


def test_container_version_mismatch():
    data = bytearray(container_to_bytes(features(["a"], 2)))
    data[4] = 9
    with pytest.raises(VersionMismatchError):
        container_from_bytes(bytes(data))


# -- folds ----------------------------------------------------------------------------------------

def fold_bound_holds(labels, fa):
    k = fa.k
    sizes = fa.fold_sizes()
    if sizes.max() - sizes.min() > 1 or (len(labels) >= k and sizes.min() == 0):
        return False
    for cls in set(labels):
        per = np.bincount(fa.folds[np.array(labels) == cls], minlength=k)
        if per.max() - per.min() > 1:
            return False
    return True


def test_folds_balanced_example():
    labels = ["a"] * 10 + ["b"] * 10
    fa = generate_stratified_folds(labels, 5, seed=0)
    assert list(fa.fold_sizes()) == [4] * 5
    for f in range(5):
        members = [labels[i] for i in np.flatnonzero(fa.folds == f)]
        assert members.count("a") == 2 and members.count("b") == 2


def test_folds_uneven_example():
    labels = ["a"] * 7 + ["b"] * 3
    fa = generate_stratified_folds(labels, 3, seed=1)
    assert sorted(fa.fold_sizes()) == [3, 3, 4]
    assert fold_bound_holds(labels, fa)


def test_folds_seeded():
    labels = list("aabbbcccc")
    a = generate_stratified_folds(labels, 3, seed=5).folds
    assert np.array_equal(a, generate_stratified_folds(labels, 3, seed=5).folds)


def test_fold_errors():
    with pytest.raises(InvalidArgumentError):
        generate_stratified_folds(["a", "b"], 3)
    with pytest.raises(InvalidArgumentError):
        generate_stratified_folds(["a", "b"], 1)
    with pytest.raises(InvalidArgumentError):
        generate_stratified_folds(["a", None, "b"], 2)


@settings(max_examples=200, deadline=None)
@given(counts=st.lists(st.integers(1, 30), min_size=1, max_size=6), k=st.integers(2, 10),
       seed=st.integers(0, 2**32 - 1))
def test_fold_imbalance_bound(counts, k, seed):
    labels = [f"c{i}" for i, n in enumerate(counts) for _ in range(n)]
    if k > len(labels):
        return
    assert fold_bound_holds(labels, generate_stratified_folds(labels, k, seed))


# -- fusion ------------------------------------------------------------------------------------------

def test_fuse_concatenates_in_order():
    a = features(["x", "y"], 2, seed=1, labels=["p", "q"])
    b = features(["x", "y"], 3, seed=2)
    f = fuse_features([a, b])
    assert f.dim == 5 and f.ids == ["x", "y"] and f.labels == ["p", "q"]
    np.testing.assert_array_equal(f.matrix(), np.hstack([a.matrix(), b.matrix()]))


def test_fuse_aligns_permuted_ids():
    a = features(["x", "y", "z"], 2, seed=1)
    b = features(["z", "x", "y"], 1, seed=2)
    f = fuse_features([a, b])
    lookup = {i.instance_id: i.data for i in b.instances}
    for inst in f.instances:
        np.testing.assert_array_equal(inst.data[2:], lookup[inst.instance_id])


def test_fuse_associative():
    a, b, c = (features(["x", "y", "z"], d, seed=d) for d in (1, 2, 3))
    left = fuse_features([fuse_features([a, b]), c])
    right = fuse_features([a, fuse_features([b, c])])
    flat = fuse_features([a, b, c])
    for other in (left, right):
        assert other.matrix().tobytes() == flat.matrix().tobytes()


def test_fuse_mismatch_lists_ids():
    with pytest.raises(FusionMismatchError) as info:
        fuse_features([features(["x", "y"], 1), features(["x", "w"], 1)])
    assert info.value.offending_ids == ["w", "y"]


def test_fuse_metadata_conflict():
    with pytest.raises(MetadataConflictError):
        fuse_features([features(["x"], 1, labels=["a"]), features(["x"], 1, labels=["b"])])


def test_fuse_missing_metadata_filled_from_other():
    f = fuse_features([features(["x"], 1), features(["x"], 1, labels=["b"], partition="test")])
    assert f.labels == ["b"] and f.instances[0].partition == "test"


def test_fuse_needs_features():
    spec = DataSetContainer("spectrogram", 1, [Instance("x", np.zeros((2, 1)))])
    with pytest.raises(InvalidArgumentError):
        fuse_features([spec, features(["x"], 1)])
    with pytest.raises(InvalidArgumentError):
        fuse_features([features(["x"], 1)])
