import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from combogran import granularity as gr
from combogran import ingest
from combogran.modal import FrameRef, UsageError


def _frames(n=21, step=0.1):
    return [FrameRef("s", i, round(i * step, 6), f"s/{i}.png") for i in range(n)]


def test_timeline_csv_and_jsonl(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text('timestamp,description\n3.2,click A\n7.9,"click B, then wait"\n')
    assert ingest.parse_timeline(p) == [ingest.ActionEvent(3.2, "click A"),
                                        ingest.ActionEvent(7.9, "click B, then wait")]
    q = tmp_path / "b.jsonl"
    q.write_text('{"timestamp": 3.2, "description": "click A"}\n\n{"timestamp": 7.9, "description": "click B"}\n')
    assert [e.timestamp for e in ingest.parse_timeline(q)] == [3.2, 7.9]


@pytest.mark.parametrize("body,line", [
    ("1.0,a\n3.0,b\n2.0,c\n", 3),
    ("1.0,a\n1.0,b\n", 2),
    ("x,a\n", 1),
    ("1.0\n", 1),
])
def test_timeline_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "t.csv"
    p.write_text(body)
    with pytest.raises(ingest.FormatError, match=f":{line}:") as exc:
        ingest.parse_timeline(p)
    assert exc.value.lineno == line


def test_batch_of_82_recordings(tmp_path):
    paths = []
    for i in range(82):
        p = tmp_path / f"rec{i:02d}.csv"
        p.write_text(f"{i}.0,Click [Fire]\n{i + 1}.5,Click [Maneuver]\n")
        paths.append(p)
    groups = ingest.parse_timelines(paths)
    assert len(groups) == 82 and all(len(v) == 2 for v in groups.values())


def test_keyframe_examples():
    frames = _frames()
    ev = [ingest.ActionEvent(1.25, "a"), ingest.ActionEvent(1.2, "b"), ingest.ActionEvent(0.0, "c")]
    res = ingest.extract_keyframes(frames, ev)
    assert [f.timestamp for f, _ in res.matched] == [1.2, 1.1]
    assert [e.description for e in res.unmatched] == ["c"]
    with pytest.raises(ValueError):
        ingest.extract_keyframes(frames[::-1], ev)


@given(st.lists(st.floats(0, 3, allow_nan=False), max_size=20))
def test_keyframes_strictly_before(stamps):
    res = ingest.extract_keyframes(_frames(), [ingest.ActionEvent(t, "x") for t in stamps])
    assert len(res.matched) + len(res.unmatched) == len(stamps)
    for frame, ev in res.matched:
        assert frame.timestamp < ev.timestamp
        later = [f for f in _frames() if frame.timestamp < f.timestamp < ev.timestamp]
        assert not later


def test_emit_samples(tmp_path):
    out = tmp_path / "o.jsonl"
    frame = FrameRef("s", 3, 0.3, "s/3.png")
    assert ingest.emit_samples([(frame, ingest.ActionEvent(0.4, "Click [Fire]"))], out) == 1
    rec = json.loads(out.read_text())
    assert list(rec) == ["image", "instruction"] and rec["image"] == "s/3.png"
    assert ingest.emit_samples([], out) == 0 and out.read_text() == ""
    with pytest.raises(ValueError, match="media"):
        ingest.emit_samples([(FrameRef("s", 1, 0.1, ""), ingest.ActionEvent(0.2, "x"))], out)


def test_emit_fused_roundtrip(tmp_path, small_videos):
    from combogran.modal import decompose
    ds = gr.build_dataset("S*M*V", decompose(small_videos))
    out = tmp_path / "f.jsonl"
    ingest.emit_samples(ds.samples, out)
    text = out.read_text()
    back = gr.read_dataset(out)
    assert back == ds.samples
    gr.write_dataset(back, tmp_path / "g.jsonl")
    assert (tmp_path / "g.jsonl").read_text() == text


def _log(tmp_path, losses, key="current_steps"):
    p = tmp_path / "trainer_log.jsonl"
    p.write_text("".join(json.dumps({key: 10 * (i + 1), "epoch": i + 1, "loss": 1.0, "eval_loss": x,
                                     "lr": 1e-4}) + "\n" for i, x in enumerate(losses)))
    return ingest.parse_trainer_log(p)


def test_trainer_log_spellings(tmp_path):
    a = _log(tmp_path, [0.9, 0.8])
    b = _log(tmp_path, [0.9, 0.8], key="step")
    assert a == b and a[1].step == 20 and a[0].extra == {"lr": 1e-4}
    p = tmp_path / "bad.jsonl"
    p.write_text('{"step": 5, "eval_loss": 1}\n{"step": 2}\n')
    with pytest.raises(ingest.FormatError, match=":2:"):
        ingest.parse_trainer_log(p)


def test_early_stop_examples(tmp_path):
    r = ingest.select_early_stop(_log(tmp_path, [1.0, 0.8, 0.7, 0.75, 0.80, 0.85]), patience=2, delta=0.01)
    assert (r.best_index, r.stop_index, r.best_step) == (2, 4, 30)
    r = ingest.select_early_stop(_log(tmp_path, [1.0, 0.9, 0.8, 0.7]))
    assert r.best_index == 3 and r.stop_index is None
    r = ingest.select_early_stop(_log(tmp_path, [0.5, 0.5, 0.5]))
    assert r.best_index == 0 and r.stop_index is None
    with pytest.raises(UsageError):
        ingest.select_early_stop([ingest.TrainerLogEntry(1, 0.1, 0.5)])


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.integers(1, 5))
def test_early_stop_selects_minimum(losses, patience):
    entries = [ingest.TrainerLogEntry(i, i, None, x) for i, x in enumerate(losses)]
    r = ingest.select_early_stop(entries, patience)
    assert r.best_loss == min(losses)
    if r.stop_index is not None:
        assert r.stop_index > r.best_index


def test_loss_curve(tmp_path):
    entries = [ingest.TrainerLogEntry(10, 1.0, 0.5), ingest.TrainerLogEntry(20, 2.0, 0.4, 0.45)]
    out = tmp_path / "c.csv"
    ingest.write_loss_curve(entries, out)
    assert out.read_text() == "step,epoch,train_loss,eval_loss\n10,1.0,0.5,\n20,2.0,0.4,0.45\n"
