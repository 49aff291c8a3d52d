"""
Directional checks on a synthetic crowded benchmark: 500 scenes of 10 to 30 people, half of them in overlapping
pairs with IoU between 0.5 and 0.7.
"""
from unittest import TestCase
import unittest
import time
import numpy as np
from crowdnms.suppression import SuppressionConfig
from crowdnms.datasets import GeneratorConfig, OracleConfig, generate_scenes, generate_proposals, annotate_oracle
from crowdnms.benchmark import parse_grid, suppress_records, evaluate_records, run_sweep, sweep_points, SWEEP_COLUMNS

def build_benchmark(oracle, scenes=500, seed=0):
    config = GeneratorConfig(scenes=scenes, gt_per_scene=(10, 30), overlap_pair_fraction=0.5,
                             pair_iou_range=(0.5, 0.7), seed=seed)
    ground_truth = generate_scenes(config)
    records = [(s.image_id, annotate_oracle(generate_proposals(s, config), s, oracle)) for s in ground_truth]
    return ground_truth, records

def score(scenes, records, config):
    return evaluate_records(scenes, suppress_records(records, config), k=100, iou_threshold=0.5)

class TestBatch(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scenes, cls.records = build_benchmark(OracleConfig(perfect=True), scenes=12, seed=3)

    def test_parse_grid(self):
        self.assertEqual(parse_grid('0.2:0.5:0.05'), [0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5])
        self.assertEqual(parse_grid('0.1:0.4:0.05'), [0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4])
        self.assertEqual(parse_grid('0.4,0.5,0.6'), [0.4, 0.5, 0.6])
        self.assertEqual(parse_grid('0.5'), [0.5])
        for text in ['', 'a,b', '0.5:0.2:0.1', '0:1:0', '0:1']:
            with self.assertRaises(ValueError):
                parse_grid(text)

    def test_workers_do_not_change_output(self):
        for method in ('greedy', 'noh'):
            config = SuppressionConfig(method)
            single = suppress_records(self.records, config, workers=1)
            pooled = suppress_records(self.records, config, workers=4)
            self.assertEqual(single, pooled)
            self.assertEqual([image_id for image_id, _ in pooled], [image_id for image_id, _ in self.records])
            self.assertTrue(all(len(kept) <= 100 for _, kept in pooled))

    def test_error_names_image(self):
        records = [(image_id, [d.replace(density=None, noh_mean=None) for d in dets]) if i == 4 else (image_id, dets)
                   for i, (image_id, dets) in enumerate(self.records)]
        with self.assertRaisesRegex(ValueError, self.records[4][0]):
            suppress_records(records, SuppressionConfig('noh'), workers=3)

    def test_sweep_rows(self):
        points = sweep_points(['greedy', 'soft-linear'], [0.4, 0.5, 0.6], [0.3], [0.2])
        self.assertEqual(len(points), 6)
        points = sweep_points(['noh'], [0.5], parse_grid('0.2:0.5:0.05'), [0.2])
        self.assertEqual(len(points), 7)

    def test_sweep_matches_single_run(self):
        config = SuppressionConfig('noh')
        table = run_sweep(self.scenes, self.records, config, ['noh', 'greedy'], [0.5])
        self.assertEqual(list(table.columns), SWEEP_COLUMNS)
        self.assertEqual(list(table.method), ['noh', 'greedy'])
        self.assertTrue(np.isnan(table.dt.iloc[1]))
        for row, method in zip(table.itertuples(), ['noh', 'greedy']):
            report = score(self.scenes, self.records, config.replace(method=method))
            self.assertEqual((row.ap, row.recall, row.mr2), (report.ap, report.recall, report.mr2))

class TestCrowdBenchmark(TestCase):
    @classmethod
    def setUpClass(cls):
        start = time.perf_counter()
        cls.scenes, cls.records = build_benchmark(OracleConfig(perfect=True))
        cls.reports = {}
        for method in ('greedy', 'soft-linear', 'noh'):
            cls.reports[method] = score(cls.scenes, cls.records, SuppressionConfig(method, nms_threshold=0.5,
                                                                                   density_threshold=0.3,
                                                                                   noh_sigma=0.2))
        cls.elapsed = time.perf_counter() - start

    def test_recall_ordering(self):
        recall = {m: r.recall for m, r in self.reports.items()}
        self.assertGreater(recall['noh'], recall['soft-linear'])
        self.assertGreater(recall['soft-linear'], recall['greedy'])

    def test_ap_gain(self):
        self.assertGreaterEqual(self.reports['noh'].ap - self.reports['greedy'].ap, 0.02)

    def test_runtime(self):
        self.assertLess(self.elapsed, 120.0)

    def test_noisy_oracle(self):
        scenes, records = build_benchmark(OracleConfig(mean_noise_std=0.05, density_noise_std=0.05))
        noh = score(scenes, records, SuppressionConfig('noh'))
        greedy = score(scenes, records, SuppressionConfig('greedy'))
        self.assertGreater(noh.ap, greedy.ap)

    def test_hyper_parameter_flatness(self):
        config = SuppressionConfig('noh')
        by_density = run_sweep(self.scenes, self.records, config, ['noh'], [0.5], parse_grid('0.2:0.5:0.05'), [0.2])
        by_sigma = run_sweep(self.scenes, self.records, config, ['noh'], [0.5], [0.3], parse_grid('0.1:0.4:0.05'))
        self.assertEqual(len(by_density), 7)
        self.assertEqual(len(by_sigma), 7)
        for table in (by_density, by_sigma):
            self.assertLess(table.ap.max() - table.ap.min(), 0.03)

    def test_threshold_dilemma(self):
        table = run_sweep(self.scenes, self.records, SuppressionConfig('greedy'), ['greedy'], [0.5, 0.7])
        low, high = table.iloc[0], table.iloc[1]
        self.assertGreater(high.recall, low.recall)
        self.assertGreater(high.mr2, low.mr2)

if __name__ == '__main__':
    unittest.main()
