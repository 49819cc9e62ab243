import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dice import prompts
from dice.prompts import (
    PromptSet,
    TextTokenPair,
    aggregate_text_tokens,
    expand_templates,
    kind_for_category,
    read_prompt_file,
    write_prompt_file,
)


def test_template_counts():
    assert len(prompts.BASE_TEMPLATES) == 22
    assert len(prompts.NORMAL_STATES) == 7
    assert len(prompts.ANOMALOUS_STATES) == 7
    assert len(prompts.SURFACE_DOMAINS) == 3
    assert len(prompts.OBJECT_DOMAINS) == 2


def test_expansion_counts_by_kind():
    surface = expand_templates("carpet", "surface")
    obj = expand_templates("bottle", "object")
    # domains x templates x states per polarity
    assert len(surface.normal) == 3 * 22 * 7 == 462
    assert len(surface.anomalous) == 462
    assert len(obj.normal) == 2 * 22 * 7 == 308
    assert len(obj.anomalous) == 308


def test_expansion_unique_and_mentions_class():
    ps = expand_templates("carpet", "surface")
    for side in (ps.normal, ps.anomalous):
        assert len(set(side)) == len(side)
        assert all("carpet" in p for p in side)


def test_expansion_first_entries():
    ps = expand_templates("carpet", "surface")
    assert ps.normal[0] == "a industrial cropped photo of the normal carpet"
    assert ps.anomalous[0] == "a industrial cropped photo of the damaged carpet"


def test_kind_for_category():
    for cat in ("carpet", "leather", "grid", "tile", "wood"):
        assert kind_for_category(cat) == "surface"
    assert kind_for_category("bottle") == "object"
    assert kind_for_category("Carpet") == "surface"


def test_prompt_set_validation():
    with pytest.raises(ValueError):
        PromptSet(class_name="x", normal=(), anomalous=("a x",))
    with pytest.raises(ValueError):
        PromptSet(class_name="x", normal=("a x", "a x"), anomalous=("b x",))


def test_prompt_file_round_trip(tmp_path):
    lines = ("a photo of the normal screw", "a bright photo of the flawless screw")
    path = tmp_path / "screw_normal.txt"
    write_prompt_file(lines, path)
    assert read_prompt_file(path) == lines
    assert path.read_bytes().endswith(b"\n")
    assert b"\r" not in path.read_bytes()


def _unit_rows(mat):
    return mat / np.linalg.norm(mat, axis=-1, keepdims=True)


def test_aggregate_is_renormalized_mean():
    rng = np.random.default_rng(0)
    normal = _unit_rows(rng.normal(size=(5, 8)))
    anom = _unit_rows(rng.normal(size=(3, 8)))
    pair = aggregate_text_tokens(normal, anom, tau=0.07)
    mean_n = normal.mean(axis=0)
    mean_a = anom.mean(axis=0)
    assert np.allclose(pair.t_n, mean_n / np.linalg.norm(mean_n))
    assert np.allclose(pair.t_a, mean_a / np.linalg.norm(mean_a))
    assert pair.tau == 0.07
    assert np.isclose(np.linalg.norm(pair.t_n), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 7))
def test_aggregate_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    normal = _unit_rows(rng.normal(size=(n, 6)))
    anom = _unit_rows(rng.normal(size=(n, 6)))
    perm = rng.permutation(n)
    a = aggregate_text_tokens(normal, anom, tau=0.01)
    b = aggregate_text_tokens(normal[perm], anom[perm], tau=0.01)
    assert np.allclose(a.t_n, b.t_n)
    assert np.allclose(a.t_a, b.t_a)


def test_aggregate_single_prompt_identity():
    v = _unit_rows(np.array([[1.0, 2.0, -1.0]]))
    pair = aggregate_text_tokens(v, v, tau=0.01)
    assert np.allclose(pair.t_n, v[0])


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError, match="empty prompt embedding set"):
        aggregate_text_tokens(np.zeros((0, 4)), np.ones((1, 4)), tau=0.01)


def test_aggregate_rejects_cancellation():
    v = np.array([[1.0, 0.0], [-1.0, 0.0]])
    with pytest.raises(ValueError, match="degenerate text token"):
        aggregate_text_tokens(v, np.array([[0.0, 1.0]]), tau=0.01)


def test_text_token_pair_validation():
    t = np.array([1.0, 0.0])
    with pytest.raises(ValueError):
        TextTokenPair(t_n=t, t_a=np.array([0.0, 2.0]), tau=0.01)
    with pytest.raises(ValueError):
        TextTokenPair(t_n=t, t_a=np.array([0.0, 1.0]), tau=0.0)
    pair = TextTokenPair(t_n=t, t_a=np.array([0.0, 1.0]), tau=0.5)
    assert pair.tau == 0.5
