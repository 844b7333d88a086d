import json
from pathlib import Path

import numpy as np
import pytest

from conftest import make_bag, small_model_config
from data_io.bags import EmbeddingBag, load_bags, read_manifest, write_dataset
from data_io.checkpoint import load_checkpoint, save_checkpoint
from data_io.synthetic import STAINS, SyntheticConfig, synthesize_bags
from evaluators.metrics import compute_metrics
from graphs.knn_graph import build_knn_graph
from helpers.errors import CheckpointError, DataFormatError
from models.mustang import init_params, mustang_forward


class TestBags:
    def test_round_trip(self, tmp_path, tiny_cohort):
        manifest = write_dataset(tiny_cohort, tmp_path / 'data')
        loaded = load_bags(manifest)
        assert [b.patient_id for b in loaded] == [b.patient_id for b in tiny_cohort]
        for original, restored in zip(tiny_cohort, loaded):
            assert restored.label == original.label
            np.testing.assert_array_equal(restored.features, original.features)
            assert restored.slide_ids == original.slide_ids
            assert restored.stains == original.stains

    def test_parallel_loading_preserves_order(self, tmp_path, tiny_cohort):
        manifest = write_dataset(tiny_cohort, tmp_path / 'data')
        serial = load_bags(manifest)
        parallel = load_bags(manifest, n_jobs=2)
        assert [b.patient_id for b in serial] == [b.patient_id for b in parallel]

    def test_stain_filter(self, tmp_path, tiny_cohort):
        manifest = write_dataset(tiny_cohort, tmp_path / 'data')
        for bag in load_bags(manifest, stain='CD20'):
            assert set(bag.stains) == {'CD20'}
            assert bag.num_rows > 0

    def test_csv_embeddings(self, tmp_path):
        (tmp_path / 'p1.csv').write_text("slide_id,stain,f0,f1\ns1,H&E,0.5,1.5\ns2,CD68,2.0,-1.0\n")
        (tmp_path / 'manifest.json').write_text(json.dumps(
            {'feature_dim': 2, 'patients': [{'id': 'p1', 'label': 1, 'path': 'p1.csv'}]}))
        [bag] = load_bags(tmp_path / 'manifest.json')
        np.testing.assert_array_equal(bag.features, [[0.5, 1.5], [2.0, -1.0]])
        assert bag.stains == ['H&E', 'CD68']

    def test_sample_dataset(self):
        bags = load_bags(Path(__file__).parent.parent / 'data_files' / 'sample_manifest.json')
        assert [(b.patient_id, b.label, b.num_rows) for b in bags] == \
            [('patient_a', 0, 5), ('patient_b', 1, 6), ('patient_c', 0, 4), ('patient_d', 1, 5)]
        assert all(b.feature_dim == 4 for b in bags)

    def test_csv_missing_value_names_row(self, tmp_path):
        (tmp_path / 'p1.csv').write_text("slide_id,stain,f0,f1\ns1,H&E,0.5,1.5\ns1,H&E,,1.0\n")
        (tmp_path / 'manifest.json').write_text(json.dumps(
            {'feature_dim': 2, 'patients': [{'id': 'p1', 'label': 0, 'path': 'p1.csv'}]}))
        with pytest.raises(DataFormatError, match='p1.*row 1'):
            load_bags(tmp_path / 'manifest.json')

    def test_dimension_mismatch(self, tmp_path, rng):
        manifest = write_dataset([make_bag(rng, 3, 4)], tmp_path / 'data')
        payload = json.loads(manifest.read_text())
        payload['feature_dim'] = 5
        manifest.write_text(json.dumps(payload))
        with pytest.raises(DataFormatError, match='p000'):
            load_bags(manifest)

    def test_missing_files(self, tmp_path, rng):
        with pytest.raises(FileNotFoundError, match='nowhere.json'):
            load_bags(tmp_path / 'nowhere.json')
        manifest = write_dataset([make_bag(rng, 3, 4)], tmp_path / 'data')
        (tmp_path / 'data' / 'patients' / 'p000.emb').unlink()
        with pytest.raises(FileNotFoundError, match='p000'):
            load_bags(manifest)

    def test_truncated_embedding_file(self, tmp_path, rng):
        manifest = write_dataset([make_bag(rng, 3, 4)], tmp_path / 'data')
        path = tmp_path / 'data' / 'patients' / 'p000.emb'
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataFormatError):
            load_bags(manifest)

    def test_non_finite_embedding_names_row(self, tmp_path, rng):
        bag = make_bag(rng, 4, 3)
        bag.features[2, 1] = np.nan
        manifest = write_dataset([bag], tmp_path / 'data')
        with pytest.raises(DataFormatError, match='p000.*row 2'):
            load_bags(manifest)

    def test_invalid_manifest(self, tmp_path):
        path = tmp_path / 'manifest.json'
        path.write_text(json.dumps({'feature_dim': 2, 'patients': [{'id': 'a', 'label': 3, 'path': 'a.emb'}]}))
        with pytest.raises(DataFormatError):
            read_manifest(path)

    def test_bag_validation(self):
        with pytest.raises(DataFormatError):
            EmbeddingBag('p', 1, np.zeros((0, 3)), [], [])
        with pytest.raises(DataFormatError):
            EmbeddingBag('p', 1, np.zeros((2, 3)), ['s'], ['H&E'])


class TestSynthetic:
    def test_deterministic(self):
        first = synthesize_bags(SyntheticConfig(num_patients=6, seed=9))
        second = synthesize_bags(SyntheticConfig(num_patients=6, seed=9))
        for a, b in zip(first, second):
            assert a.patient_id == b.patient_id and a.label == b.label
            np.testing.assert_array_equal(a.features, b.features)

    def test_default_cohort_shape(self):
        bags = synthesize_bags(SyntheticConfig())
        assert len(bags) == 40
        assert sum(b.label for b in bags) == 20
        assert all(b.feature_dim == 64 for b in bags)
        assert all(16 <= b.num_rows <= 96 for b in bags)
        assert {s for b in bags for s in b.stains} <= set(STAINS)

    def test_nearest_centroid_separates_classes(self):
        bags = synthesize_bags(SyntheticConfig())
        means = np.array([b.features.mean(axis=0) for b in bags])
        labels = np.array([b.label for b in bags])
        centroids = [means[labels == c].mean(axis=0) for c in (0, 1)]
        distance = np.stack([np.linalg.norm(means - c, axis=1) for c in centroids], axis=1)
        predicted = distance.argmin(axis=1).astype(np.float64)
        assert compute_metrics(predicted, labels).f1 >= 0.9

    def test_separation_is_absolute(self):
        cfg = SyntheticConfig(num_patients=4, feature_dim=5, noise=0.0, signal_fraction=1.0,
                              class_separation=3.0, seed=1)
        bags = synthesize_bags(cfg)
        negative = next(b for b in bags if b.label == 0).features
        positive = next(b for b in bags if b.label == 1).features
        assert np.ptp(negative, axis=0).max() == 0.0
        assert np.linalg.norm(positive[0] - negative[0]) == pytest.approx(3.0)

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            SyntheticConfig(patches_per_slide=(5, 2))


class TestCheckpoint:
    def test_round_trip_reproduces_logits(self, tmp_path, rng):
        cfg = small_model_config()
        params = init_params(cfg, seed=8)
        g = build_knn_graph(rng.normal(size=(10, 6)), 3)
        path = save_checkpoint(params, cfg, tmp_path / 'model.ckpt', meta={'best_epoch': 4})

        restored, restored_cfg, meta = load_checkpoint(path)
        assert restored_cfg == cfg
        assert meta == {'best_epoch': 4}
        np.testing.assert_array_equal(mustang_forward(g, restored, restored_cfg)[0].data,
                                      mustang_forward(g, params, cfg)[0].data)

    def _header_and_payload(self, path):
        raw = path.read_bytes()
        newline = raw.index(b'\n')
        return json.loads(raw[:newline]), raw[newline + 1:]

    def test_tampered_shape(self, tmp_path):
        cfg = small_model_config()
        path = save_checkpoint(init_params(cfg, seed=0), cfg, tmp_path / 'model.ckpt')
        header, payload = self._header_and_payload(path)
        header['arrays'][0]['shape'] = [3, 8]
        path.write_bytes(json.dumps(header).encode() + b'\n' + payload)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        cfg = small_model_config()
        path = save_checkpoint(init_params(cfg, seed=0), cfg, tmp_path / 'model.ckpt')
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupted_header(self, tmp_path):
        path = tmp_path / 'model.ckpt'
        path.write_bytes(b'{not json\n')
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / 'absent.ckpt')
