import json

import numpy as np
import pytest

from abm_pipeline.core import (
    LAYERS,
    DataError,
    FeatureVector,
    LayerId,
    Manifest,
    RoiId,
    Table,
    read_matrix_csv,
    write_matrix_csv,
)


def test_layer_ids():
    assert [l.name for l in LayerId] == ["Conv1", "Conv2", "Conv3", "Conv4", "Conv5", "Fc6", "Fc7"]
    assert "Fc8" not in LayerId.__members__
    assert [l.feature_length for l in LAYERS] == [290400, 186624, 64896, 64896, 43264, 4096, 4096]
    assert LayerId.Conv1.feature_length == 96 * 55 * 55
    assert LayerId.parse("fc6") is LayerId.Fc6
    with pytest.raises(DataError):
        LayerId.parse("fc8")


def test_roi_composition():
    assert len(RoiId) == 10
    comp = {r: set(r.composition) for r in RoiId}
    assert comp[RoiId.LVC] == {RoiId.V1, RoiId.V2, RoiId.V3}
    assert comp[RoiId.HVC] == {RoiId.LOC, RoiId.FFA, RoiId.PPA}
    assert comp[RoiId.LVC] | comp[RoiId.HVC] | {RoiId.V4} == comp[RoiId.VC]
    for r in RoiId.atomic():
        assert r.composition == (r,)
    assert len(RoiId.atomic()) == 7 and len(RoiId.composite()) == 3


def test_read_small_file(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("id,f0,f1\na,1,2\nb,3,4\nc,5,6.5\n")
    ids, m = read_matrix_csv(p)
    assert ids == ["a", "b", "c"]
    assert m.shape == (3, 2)
    assert m[2, 1] == 6.5


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("id,f0\na,NaN\n", "row 2, column 1"),
        ("id,f0\na,inf\n", "non-finite"),
        ("id,f0,f1\na,1\n", "row 2 has 2 fields"),
        ("id,f0\na,x\n", "non-numeric"),
        ("id,f0\na,1\na,2\n", "repeats id 'a'"),
        ("name,f0\na,1\n", "'id'"),
    ],
)
def test_read_errors(tmp_path, body, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataError, match=fragment):
        read_matrix_csv(p)


def test_read_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        read_matrix_csv(tmp_path / "nope.csv")


def test_write_formats(tmp_path):
    p = tmp_path / "one.csv"
    write_matrix_csv(p, ["x"], np.array([[2.5]]))
    assert p.read_text() == "id,c0\nx,2.5\n"
    e = tmp_path / "empty.csv"
    write_matrix_csv(e, [], np.zeros((0, 3)))
    assert e.read_text() == "id,c0,c1,c2\n"
    ids, m = read_matrix_csv(e)
    assert ids == [] and m.shape == (0, 3)


def test_write_rejects_mismatch(tmp_path):
    with pytest.raises(DataError):
        write_matrix_csv(tmp_path / "x.csv", ["a"], np.zeros((2, 2)))


def test_round_trip_random(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(100):
        n, d = rng.integers(0, 6), rng.integers(1, 6)
        m = rng.standard_normal((n, d)) * 10.0 ** rng.integers(-20, 20, size=(n, d))
        ids = [f"r{trial}_{i}" for i in range(n)]
        p = tmp_path / f"{trial}.csv"
        write_matrix_csv(p, ids, m)
        ids2, m2 = read_matrix_csv(p)
        assert ids2 == ids
        assert m2.shape == m.shape
        np.testing.assert_allclose(m2, m, rtol=1e-12, atol=0)


def test_table_alignment():
    t = Table(("b", "a"), np.array([[2.0], [1.0]]))
    np.testing.assert_array_equal(t.align(["a", "b"]), [[1.0], [2.0]])
    assert t.sorted().ids == ("a", "b")
    with pytest.raises(DataError, match="'z'"):
        t.align(["a", "z"], what="fMRI V1")
    with pytest.raises(DataError):
        Table(("a", "a"), np.zeros((2, 1)))


def test_feature_vector_rejects_nan():
    with pytest.raises(DataError):
        FeatureVector(LayerId.Fc6, "x", np.array([1.0, np.nan]))


def test_manifest_round_trip(tmp_path):
    m = Manifest(
        root=tmp_path,
        features={"test": {LayerId.Conv1: "f.csv"}},
        fmri={"test": {RoiId.VC: "v.csv"}},
        abm={"test": "a.csv"},
        splits={"test": ["x", "y"]},
        categories={"animal": ["x"], "object": ["y"]},
    )
    path = m.save(tmp_path / "manifest.json")
    doc = json.loads(path.read_text())
    assert doc["features"]["test"] == {"Conv1": "f.csv"}
    back = Manifest.load(path)
    assert back.features == m.features and back.fmri == m.fmri and back.splits == m.splits
    with pytest.raises(DataError, match="no fmri for split"):
        back.load_fmri("stage1-train")
