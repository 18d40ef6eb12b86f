import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridnav.promptdb import (
    NAVIGABILITY_PROMPTS,
    TARGET_PROMPTS,
    EncodedPromptDB,
    HashEmbeddingProvider,
    Polarity,
    PromptSet,
    PromptSyntaxError,
    TemplateSpec,
    build_db,
    expand_template,
    expand_templates,
    load_prompt_set,
    parse_template_spec,
    quantize_unit,
)


def test_teddy_bear_family_gives_four():
    spec = TemplateSpec(top_level=["A photo of a {} {}"], states=["brown", "toy"], objects=["bear", "teddy bear"])
    out = expand_templates(spec)
    assert len(out) == 4
    assert "A photo of a brown bear" in out and "A photo of a toy teddy bear" in out


def test_in_place_terminal_gives_three():
    out = expand_template("A photo with no context|texture|information")
    assert out == ["A photo with no context", "A photo with no texture", "A photo with no information"]


def test_in_place_inside_word_list():
    spec = TemplateSpec(top_level=["A photo of a {} {}"], states=["brown|toy"], objects=["bear|teddy bear"])
    assert len(expand_templates(spec)) == 4


def test_no_markers_is_identity():
    assert expand_templates(TemplateSpec(top_level=["just a plain prompt"])) == ["just a plain prompt"]


def test_early_termination_consumes_fewer_lists():
    spec = TemplateSpec(top_level=["A {} photo"], descriptions=["clear", "blurry"], objects=["floor"])
    assert expand_templates(spec) == ["A clear photo", "A blurry photo"]


def test_explicit_slot_binding():
    spec = TemplateSpec(top_level=["{object} seen {desc}"], descriptions=["close"], objects=["desk", "chair"])
    assert expand_templates(spec) == ["desk seen close", "chair seen close"]


def test_whitespace_collapses():
    assert expand_template("A   photo  of {}", TemplateSpec(objects=["x"])) == ["A photo of x"]


@pytest.mark.parametrize("bad, col", [("A {photo", 3), ("A photo}", 8), ("a||b", 1)])
def test_syntax_errors_carry_position(bad, col):
    with pytest.raises(PromptSyntaxError) as e:
        expand_template(bad, line=4)
    assert e.value.line == 4 and e.value.column >= 1


def test_file_errors_report_line():
    with pytest.raises(PromptSyntaxError) as e:
        parse_template_spec("[templates]\nok\nA {broken\n")
    assert e.value.line == 3


words = st.text(alphabet="abcdefgh", min_size=1, max_size=5)


@settings(max_examples=60)
@given(st.lists(words, max_size=3), st.lists(words, max_size=3), st.lists(words, max_size=3),
       st.integers(0, 3))
def test_count_law(d, s, o, nslots):
    lists = [d, s, o]
    nonempty = [l for l in lists if l]
    nslots = min(nslots, len(nonempty))
    spec = TemplateSpec(top_level=["T" + " {}" * nslots], descriptions=d, states=s, objects=o)
    expected = math.prod(len(l) for l in nonempty[:nslots])
    assert len(expand_templates(spec)) == expected


@given(st.lists(st.text(alphabet="abc xyz", min_size=1, max_size=12).filter(lambda t: t.strip()), max_size=6))
def test_expansion_idempotent_on_terminals(items):
    terms = [" ".join(t.split()) for t in items]
    once = [p for t in terms for p in expand_template(t)]
    twice = [p for t in once for p in expand_template(t)]
    assert once == twice


def test_bundled_prompt_sets():
    nav = load_prompt_set(NAVIGABILITY_PROMPTS)
    tgt = load_prompt_set(TARGET_PROMPTS)
    assert "A photo with no texture" in nav.negative
    assert len(tgt.positive) == 4
    assert len(set(nav.positive)) == len(nav.positive)


def test_prompt_set_requires_content():
    with pytest.raises(ValueError):
        PromptSet([], [])


def test_build_db_counts_and_order():
    p = HashEmbeddingProvider(64)
    db = build_db(PromptSet(["a", "b", "c"], ["d", "a"]), p)
    assert len(db) == 5 and db.counts() == (3, 2)
    assert db.texts == ("a", "b", "c", "d", "a")
    assert db.polarity[3] is Polarity.NEGATIVE
    assert np.array_equal(db.vectors[0], db.vectors[4])


def test_build_db_deterministic_and_unit():
    ps = load_prompt_set(NAVIGABILITY_PROMPTS)
    a = build_db(ps, HashEmbeddingProvider(512, 7))
    b = build_db(ps, HashEmbeddingProvider(512, 7))
    assert a.dumps() == b.dumps()
    assert np.max(np.abs(np.linalg.norm(a.vectors, axis=1) - 1)) <= 1e-9


def test_provider_failure_names_prompt():
    class Broken:
        dim = 8

        def encode(self, text):
            raise OSError("model offline")

    with pytest.raises(RuntimeError, match="'hello'"):
        build_db(PromptSet(["hello"]), Broken())


def test_serialization_round_trip_bit_exact():
    db = build_db(load_prompt_set(TARGET_PROMPTS), HashEmbeddingProvider(128, 3))
    back = EncodedPromptDB.loads(db.dumps())
    assert np.array_equal(back.vectors, db.vectors)
    assert back.texts == db.texts and back.polarity == db.polarity
    assert db.dumps().splitlines()[0] == "promptdb v1 D=128"


def test_loads_rejects_bad_dims():
    db = build_db(PromptSet(["x"]), HashEmbeddingProvider(16))
    text = db.dumps().replace("D=16", "D=17")
    with pytest.raises(ValueError, match="dims"):
        EncodedPromptDB.loads(text)


@given(st.integers(0, 2**32 - 1), st.integers(64, 1024), st.floats(1e-3, 1e3))
def test_quantize_unit(seed, dim, scale):
    v = np.random.default_rng(seed).standard_normal(dim) * scale
    q = quantize_unit(v)
    assert abs(np.linalg.norm(q) - 1.0) <= 1e-9
    assert np.array_equal(q.astype(np.float32).astype(np.float64), q)


def test_hash_provider_near_orthogonal():
    p = HashEmbeddingProvider(512)
    a, b = p.encode("floor"), p.encode("wall")
    assert abs(a @ b) < 0.2
    assert np.array_equal(a, p.encode("floor"))
