import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from isqed.core import ResponseMatrix, SampleSet, ValidationError, make_model_ids
from isqed.io import (
    SCHEMA_ID, AuditRunConfig, ParseError, align_labels, dumps_report, emit_responses, format_responses,
    ingest_responses, load_report, make_report, parse_responses, to_jsonable, validate_report, write_report,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(
    vals=st.lists(st.lists(finite, min_size=2, max_size=2), min_size=1, max_size=15),
    doses=st.lists(finite, min_size=15, max_size=15),
)
def test_csv_round_trip_is_exact(vals, doses):
    pts = tuple((f"x{i}", doses[i]) for i in range(len(vals)))
    m = ResponseMatrix(make_model_ids(["a", "b"]), SampleSet(pts), np.array(vals))
    back = parse_responses(format_responses(m))
    assert back.sample.points == pts
    assert np.array_equal(back.values, m.values)
    assert back.labels == ["a", "b"]


def test_file_round_trip(tmp_path):
    m = ResponseMatrix.from_array([[0.1, 1 / 3], [2.0, -5e-300]], ["m1", "m2"])
    p = emit_responses(m, tmp_path / "r.csv")
    assert np.array_equal(ingest_responses(p).values, m.values)


@pytest.mark.parametrize(
    "text, match",
    [
        ("input_id,dose,a\nx,0,1\ny,0,nan\n", r"row 3, column 'a': non-finite"),
        ("input_id,dose,a\nx,0,1\ny,0,abc\n", r"row 3, column 'a': non-numeric"),
        ("input_id,a\nx,1\n", r"row 1: header must start"),
        ("input_id,dose,a\nx,0,1\nx,0,2\n", r"row 3: duplicate .* first seen on row 2"),
        ("input_id,dose,a\nx,0,1,2\n", r"row 2: expected 3 columns"),
        ("input_id,dose,a,a\nx,0,1,2\n", r"duplicate model names"),
        ("input_id,dose,a\n", r"no data rows"),
        ("", r"empty file"),
        ("input_id,dose,a\nx,inf,1\n", r"row 2, column 'dose'"),
    ],
)
def test_malformed_csv_names_location(text, match):
    with pytest.raises(ParseError, match=match):
        parse_responses(text)


def test_parse_error_is_validation_error():
    assert issubclass(ParseError, ValidationError)


def test_align_labels_vector_and_matrix():
    m = parse_responses("input_id,dose,a,b\nx,0,1,2\ny,0,3,4\n")
    v = parse_responses("input_id,dose,label\ny,0,30\nx,0,10\n")
    assert align_labels(m, v).tolist() == [10.0, 30.0]
    per = parse_responses("input_id,dose,b,a\nx,0,1,2\ny,0,3,4\n")
    assert align_labels(m, per).tolist() == [[2.0, 1.0], [4.0, 3.0]]
    with pytest.raises(ValidationError, match="no label"):
        align_labels(m, parse_responses("input_id,dose,label\nx,0,1\n"))


def test_report_validates_and_is_byte_identical(tmp_path):
    result = {"mean_auc": {"random": 0.25}, "x": np.float64(1.5), "nan": float("nan")}
    a = write_report(tmp_path / "a.json", "experiment/prune", result, {"seed": 1}, 1).read_bytes()
    b = write_report(tmp_path / "b.json", "experiment/prune", result, {"seed": 1}, 1).read_bytes()
    assert a == b
    doc = load_report(tmp_path / "a.json")
    assert doc["schema"] == SCHEMA_ID and doc["result"]["nan"] is None
    assert doc["provenance"]["versions"]["package"]


def test_schema_rejects_bad_documents():
    good = make_report("experiment/prune", {}, {}, 0)
    validate_report(good)
    bad = dict(good, kind="nonsense")
    with pytest.raises(ValidationError, match="kind"):
        validate_report(bad)
    with pytest.raises(ValidationError):
        make_report("audit", {"target": "a"}, {}, 0)
    with pytest.raises(ValidationError):
        validate_report({k: v for k, v in good.items() if k != "provenance"})


def test_to_jsonable_handles_numpy():
    out = to_jsonable({"a": np.arange(3), "b": (np.int64(2), np.bool_(True)), "c": float("inf")})
    assert json.dumps(out) == '{"a": [0, 1, 2], "b": [2, true], "c": null}'
    with pytest.raises(TypeError):
        to_jsonable(object())


def test_audit_run_config_validation():
    with pytest.raises(ValidationError):
        AuditRunConfig("in.csv", "a", "out.json", fit_fraction=1.0)
    with pytest.raises(ValidationError):
        AuditRunConfig("", "a", "out.json")
    assert AuditRunConfig("i", "a", "o", peer_ids=["b"]).to_dict()["peer_ids"] == ["b"]


def test_output_rejects_nan_serialisation():
    with pytest.raises(ValueError):
        dumps_report({"x": float("nan")})
