import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from combogran import granularity as gr
from combogran import modal


def test_parse_examples():
    assert gr.parse_expr("M*V+S").terms == (("M", "V"), ("S",))
    assert gr.parse_expr("S").terms == (("S",),)
    assert gr.parse_expr("S*V+M*V").terms == (("S", "V"), ("M", "V"))
    assert gr.parse_expr(" S * V + M ").terms == (("S", "V"), ("M",))


@pytest.mark.parametrize("text,offset", [("", 0), ("S*", 2), ("S+*M", 2), ("S*X", 2), ("SM", 1), ("é*S", 0)])
def test_parse_errors_carry_offset(text, offset):
    with pytest.raises(gr.ExprSyntaxError) as exc:
        gr.parse_expr(text)
    assert exc.value.offset == offset


def test_byte_offsets_count_utf8():
    with pytest.raises(gr.ExprSyntaxError) as exc:
        gr.parse_expr("S+é")
    assert exc.value.offset == 2
    with pytest.raises(gr.ExprSyntaxError) as exc:
        gr.parse_expr("é")
    with pytest.raises(gr.ExprSyntaxError) as exc:
        gr.parse_expr("S*S")
    assert "repeated" in str(exc.value)


exprs = st.lists(st.permutations("SMV").flatmap(lambda p: st.integers(1, 3).map(lambda k: p[:k])),
                 min_size=1, max_size=4)


@given(exprs)
def test_render_parse_roundtrip(terms):
    text = "+".join("*".join(t) for t in terms)
    e = gr.parse_expr(text)
    assert str(e) == text
    assert gr.parse_expr(str(e)) == e


def test_canonical_is_order_insensitive():
    assert gr.parse_expr("S*V*M").canonical() == gr.parse_expr("S*M*V").canonical()
    assert gr.parse_expr("M*V+S").canonical() == gr.parse_expr("S+V*M").canonical()
    assert gr.parse_expr("S*V+M").canonical() != gr.parse_expr("M*V+S").canonical()


def test_fused_parts_in_term_order(small_videos):
    corpus = modal.decompose(small_videos)
    samples = gr.fuse_term(("S", "M", "V"), corpus)
    assert len(samples) == 3
    for s, v in zip(samples, small_videos):
        kinds = [p.kind for p in s.parts]
        assert kinds == ["static"] * v.n_keys + ["multi", "video"]
        assert s.target == v.label
    mv = gr.fuse_term(("V", "M"), corpus)[0]
    assert [p.kind for p in mv.parts] == ["video", "multi"]


def test_missing_modality_names_scene(small_videos):
    corpus = modal.decompose(small_videos)
    partial = dataclasses.replace(corpus, multis=corpus.multis[1:])
    with pytest.raises(gr.MissingModalityError, match=small_videos[0].scene_id) as exc:
        gr.build_dataset("M*V", partial)
    assert "M" in str(exc.value)


def test_mixing_preserves_samples(small_videos):
    corpus = modal.decompose(small_videos)
    mv = gr.build_dataset("M*V", corpus)
    s = gr.build_dataset("S", corpus)
    mixed = gr.build_dataset("M*V+S", corpus)
    assert [gr.dumps_sample(x) for x in mixed.samples] == [gr.dumps_sample(x) for x in mv.samples + s.samples]
    assert mixed.provenance == {"M*V": 3, "S": small_videos[0].n_keys + small_videos[1].n_keys + small_videos[2].n_keys}


def test_fusion_never_crosses_scenes(ref_corpus):
    ds = gr.build_dataset("S*M*V+S*V", ref_corpus)
    for sample in ds.samples:
        refs = [r for p in sample.parts for r in p.refs]
        assert all(r.startswith(sample.scene_id + "/") for r in refs)


def test_labels_inherit(ref_corpus):
    labels = {v.scene_id: v.label for v in ref_corpus.videos}
    for sample in gr.build_dataset("S*V+M", ref_corpus).samples:
        assert sample.target == labels[sample.scene_id]


def test_deterministic(ref_corpus, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    gr.write_dataset(gr.build_dataset("M*V+S", ref_corpus).samples, a)
    gr.write_dataset(gr.build_dataset("M*V+S", ref_corpus).samples, b)
    assert a.read_bytes() == b.read_bytes()
    assert [x.to_record() for x in gr.read_dataset(a)] == [x.to_record() for x in gr.build_dataset("M*V+S", ref_corpus).samples]


def test_minimal_records(small_videos):
    corpus = modal.decompose(small_videos)
    s = gr.build_dataset("S", corpus).samples[0]
    assert gr.dumps_sample(s, minimal=True).startswith('{"image": ')
    with pytest.raises(ValueError):
        gr.dumps_sample(gr.build_dataset("M", corpus).samples[0], minimal=True)


def _scene_with_keys(k):
    from combogran.modal import FrameRef, VideoSample
    frames = tuple(FrameRef("z", i, float(i), f"z/{i}") for i in range(k + 1))
    return VideoSample("z", frames, tuple(range(1, k + 1)), frozenset({"t"}), tuple(f"l{i}" for i in range(k)))


def test_window_examples():
    corpus = modal.decompose([_scene_with_keys(6)])
    w2 = gr.sliding_windows(corpus, 2)
    assert len(w2) == 5
    assert [p.refs[0] for p in w2.samples[0].parts] == ["z/1", "z/2"]
    assert w2.samples[0].target == "l1"
    assert len(gr.sliding_windows(corpus, 6)) == 1
    w1 = gr.sliding_windows(corpus, 1)
    assert [s.parts for s in w1.samples] == [s.parts for s in gr.build_dataset("S", corpus).samples]
    with pytest.raises(ValueError):
        gr.sliding_windows(corpus, 0)
    with pytest.raises(ValueError):
        gr.sliding_windows(corpus, 7)


@pytest.mark.parametrize("w", range(1, 7))
def test_window_counts(ref_corpus, w):
    expected = sum(max(v.n_keys - w + 1, 0) for v in ref_corpus.videos)
    assert len(gr.sliding_windows(ref_corpus, w)) == expected
