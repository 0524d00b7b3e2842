import numpy as np
import pytest

from idro.model import CcLinearProgram, Observation, load_model, model_from_dict, save_model, validate


def small(**over):
    kw = dict(c=[1.0, -1.0], A=[[1.0, 1.0]], h=[4.0], B=[[1.0, 0.0]], D=[[1.0]], d=[2.0], gamma=0.1)
    kw.update(over)
    return CcLinearProgram(**kw)


def test_consistent_model_has_no_diagnostics():
    assert validate(small()) == []


def test_dimension_mismatch_names_fields():
    diags = validate(small(B=[[1.0, 0.0], [0.0, 1.0]]))
    assert diags == ["B/d: B has 2 rows, d has 1 entries"]


def test_gamma_range():
    diags = validate(small(gamma=1.2))
    assert diags == ["gamma out of (0,1): 1.2"]


@pytest.mark.parametrize("field", ["c", "A", "h", "B", "D", "d"])
def test_nan_and_inf_become_diagnostics(field):
    m = small()
    arr = np.array(getattr(m, field), dtype=float)
    arr.flat[0] = np.nan if field in "cAh" else np.inf
    diags = validate(small(**{field: arr}))
    assert any(x.startswith(field) and "non-finite" in x for x in diags)


def test_validate_never_raises_on_garbage():
    m = CcLinearProgram(c=[], A=[[]], h=[], B=[[]], D=[[]], d=[], gamma=float("nan"))
    diags = validate(m)
    assert diags and all(isinstance(x, str) for x in diags)


def test_bounds_checked():
    diags = validate(small(variable_lower=[0, 3], variable_upper=[1, 2]))
    assert any("variable_lower > variable_upper" in x for x in diags)
    assert validate(small(variable_lower=[0, -np.inf], variable_upper=[np.inf, 2])) == []


def test_check_raises_with_all_problems():
    with pytest.raises(ValueError, match="gamma"):
        small(gamma=0).check()


def test_bounds_folded_into_rows():
    A, h = small(variable_lower=[0, -np.inf], variable_upper=[5, np.inf]).ordinary_rows()
    assert A.tolist() == [[1, 1], [-1, 0], [1, 0]]
    assert h.tolist() == [4, 0, 5]


def test_json_roundtrip(tmp_path):
    m = small(variable_lower=[0, -np.inf], variable_upper=[1, 2])
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for f in ("c", "A", "h", "B", "D", "d", "variable_lower", "variable_upper"):
        assert np.array_equal(getattr(back, f), getattr(m, f))
    assert back.gamma == m.gamma


def test_json_missing_key():
    with pytest.raises(ValueError, match="gamma"):
        model_from_dict({"c": [1], "A": [[1]], "h": [1], "B": [[1]], "D": [[1]], "d": [1]})


def test_observation_length_check():
    with pytest.raises(ValueError):
        Observation([1.0]).check_against(small())
    Observation([1.0, 2.0], timestamp="t0").check_against(small())
