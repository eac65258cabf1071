import json

import numpy as np
import pytest

from ccorobust.cli import fixture_ids, load
from ccorobust.problemfile import ProblemError, emit_problem, from_dict, parse_problem
from ccorobust.uncertainkit import ModelError, sample

TOY = {
    "id": "t",
    "decision": {"n": 1},
    "objective": {"linear": [1]},
    "chance": {"r": 1, "terms": [{"a": [1], "b": 0, "alpha": [0]}, {"a": None, "b": -1, "alpha": [1]}]},
    "random": {"model": {"kind": "product", "components": [{"family": "gaussian", "loc": 0, "scale": 1}]}},
    "risk": {"eps": 0.05},
}


def _copy(**over):
    d = json.loads(json.dumps(TOY))
    d.update(over)
    return d


def test_ex63_shape():
    pf = load("ex6.3")
    assert (pf.n, pf.r, pf.d) == (3, 3, 4)
    assert pf.perturbed_constraint().d == 4


def test_missing_chance_is_reported():
    d = _copy()
    del d["chance"]
    with pytest.raises(ProblemError) as ei:
        from_dict(d)
    assert any(s.startswith("chance:") for s in ei.value.diagnostics)


def test_duplicate_exponent_is_reported():
    d = _copy()
    d["chance"]["terms"].append({"a": [2], "b": 0, "alpha": [0]})
    with pytest.raises(ProblemError) as ei:
        from_dict(d)
    assert any("chance.terms[2].alpha" in s and "duplicate" in s for s in ei.value.diagnostics)


def test_unknown_family():
    d = _copy()
    d["random"]["model"]["components"][0]["family"] = "cauchy"
    with pytest.raises((ProblemError, ModelError)):
        from_dict(d).random_model()


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"id": "x",\n "decision": }')
    with pytest.raises(ProblemError) as ei:
        parse_problem(p)
    assert "2:" in ei.value.diagnostics[0]


@pytest.mark.parametrize("fid", fixture_ids())
def test_fixture_roundtrip(fid, tmp_path):
    pf = load(fid)
    path = tmp_path / f"{fid}.json"
    emit_problem(pf, path)
    back = parse_problem(path)
    a, b = back.to_dict(), pf.to_dict()
    a["random"].pop("model", None), b["random"].pop("model", None)
    assert a == b
    if pf.random_model() is not None:
        assert np.array_equal(sample(back.random_model(), 5, 0), sample(pf.random_model(), 5, 0))
    assert np.allclose(back.moments()[1], pf.moments()[1])


def test_explicit_moments_win():
    d = _copy()
    d["random"]["mu"] = [0.5]
    d["random"]["Lambda"] = [[2.0]]
    mu, Lam = from_dict(d).moments()
    assert mu[0] == 0.5 and Lam[0, 0] == 2.0
