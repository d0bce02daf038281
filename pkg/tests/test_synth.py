import hashlib

import numpy as np
import pytest

from momentalign.data import read_annotations
from momentalign.exceptions import ConfigurationError
from momentalign.synth import (EVENT_TOKENS, EventVocabulary, GenerationSpec, SyntheticVideo,
                               _ground_truth, generate, oracle_solve, runs, write_dataset)
from momentalign.video import read_features


def _digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def big():
    return generate(GenerationSpec(plain=200, ordinal=400, relational=400, seed=3))


class TestGeneration:
    def test_oracle_agrees_on_every_sample(self, big):
        assert len(big.queries) == 1000
        for video, query in zip(big.videos, big.queries):
            assert oracle_solve(video, query.text, big.events.tokens) == query.interval

    def test_ordinal_repeats_event(self, big):
        for video, query in zip(big.videos, big.queries):
            if query.template != "ordinal":
                continue
            target = big.events.tokens.index(query.text.split()[0])
            occ = [(s, e) for c, s, e in runs(video.events) if c == target]
            k = ("first", "second", "third").index(query.text.split()[2]) + 1
            assert len(occ) >= max(k, 2)
            first, kth = occ[0], occ[k - 1]
            assert k == 1 or first != kth

    def test_relational_reverses_sentence_order(self, big):
        for video, query in zip(big.videos, big.queries):
            if query.template != "relational":
                continue
            a_tok, _, b_tok = query.text.split()
            b = big.events.tokens.index(b_tok)
            first_b = next((s, e) for c, s, e in runs(video.events) if c == b)
            assert query.interval[0] >= first_b[1] * video.segment_seconds

    def test_ground_truth_snaps_to_segments(self, big):
        for video, query in zip(big.videos, big.queries):
            for t in query.interval:
                assert (t / video.segment_seconds) == int(t / video.segment_seconds)

    def test_features_shape(self, big):
        f = big.features[big.videos[0].video_id]
        assert f.features.shape == (240, 32) and f.duration == 30.0

    def test_charades_geometry(self):
        ds = generate(GenerationSpec(plain=2, ordinal=2, relational=2, preset="charades", seed=1))
        assert all(len(v.events) == 16 for v in ds.videos)
        assert ds.features[ds.videos[0].video_id].features.shape == (256, 32)
        for v, q in zip(ds.videos, ds.queries):
            assert oracle_solve(v, q.text, ds.events.tokens) == q.interval


class TestExamples:
    def test_second_occurrence(self):
        events = [1, 2, 1, 2, 1, 1]
        assert _ground_truth(events, "ordinal", 2, 2, None) == (3, 4)
        video = SyntheticVideo("v", events, 40, 5.0)
        assert oracle_solve(video, "E2 the second time", ["e0", "e1", "e2"]) == (15.0, 20.0)

    def test_relational_example(self):
        video = SyntheticVideo("v", [0, 2, 0, 0, 1, 0], 40, 5.0)
        assert oracle_solve(video, "b after c", ["a", "b", "c"]) == (20.0, 25.0)

    def test_runs(self):
        assert runs([0, 0, 1, 0]) == [(0, 0, 2), (1, 2, 3), (0, 3, 4)]

    def test_unresolvable_query(self):
        video = SyntheticVideo("v", [0, 1, 0], 40, 5.0)
        with pytest.raises(ConfigurationError):
            oracle_solve(video, "a after b the", ["a", "b"])
        with pytest.raises(ConfigurationError):
            oracle_solve(video, "a", ["a", "b"])


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path):
        spec = GenerationSpec(plain=3, ordinal=3, relational=3, seed=7)
        write_dataset(generate(spec), tmp_path / "a")
        write_dataset(generate(spec), tmp_path / "b")
        assert _digest(tmp_path / "a") == _digest(tmp_path / "b")

    def test_different_seed_differs(self):
        a = generate(GenerationSpec(ordinal=5, seed=1))
        b = generate(GenerationSpec(ordinal=5, seed=2))
        assert [v.events for v in a.videos] != [v.events for v in b.videos]

    def test_world_seed_shares_prototypes(self):
        a = generate(GenerationSpec(plain=1, seed=1))
        b = generate(GenerationSpec(plain=1, seed=2))
        assert np.array_equal(a.events.prototypes, b.events.prototypes)

    def test_prototype_angles(self):
        protos = EventVocabulary.draw(16, 8, seed=0).prototypes
        cos = np.abs(protos @ protos.T)[~np.eye(16, dtype=bool)]
        assert cos.max() < np.cos(np.deg2rad(10))


class TestFiles:
    def test_empty_spec(self, tmp_path):
        write_dataset(generate(GenerationSpec(seed=0)), tmp_path)
        assert (tmp_path / "annotations.jsonl").read_text() == ""
        assert not (tmp_path / "features").exists()

    def test_written_dataset_reads_back(self, tmp_path):
        ds = generate(GenerationSpec(plain=2, ordinal=2, relational=2, seed=5))
        manifest = write_dataset(ds, tmp_path, {"subcommand": "generate"})
        samples = read_annotations(tmp_path / "annotations.jsonl")
        assert [s.interval for s in samples] == [q.interval for q in ds.queries]
        feats = read_features(tmp_path / "features" / f"{samples[0].video_id}.json")
        assert np.array_equal(feats.features, ds.features[samples[0].video_id].features)
        vocab = (tmp_path / "vocab.txt").read_text().split()
        assert vocab[0] == "<unk>" and set(EVENT_TOKENS[:8]) <= set(vocab)
        assert manifest["run_config"] == {"subcommand": "generate"}
        assert all((tmp_path / f).exists() for f in manifest["files"])


class TestValidation:
    @pytest.mark.parametrize("kwargs", [
        dict(plain=-1), dict(num_events=1), dict(num_events=17), dict(preset="x"),
        dict(ordinal=1, max_ordinal=4), dict(relational=1, num_events=2), dict(noise=-0.1),
    ])
    def test_infeasible_specs(self, kwargs):
        with pytest.raises(ConfigurationError):
            generate(GenerationSpec(**kwargs))
