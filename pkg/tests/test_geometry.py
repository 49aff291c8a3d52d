from unittest import TestCase
import unittest
import math
import numpy as np
from crowdnms.geometry import (BBox, RelCoeffs, area, iou, iof, encode_relative, decode_relative, gaussian_likelihood,
                               boxes_to_array, iou_matrix, iof_matrix)

def random_boxes(generator, n):
    xy = generator.uniform(-50.0, 150.0, size=(n, 2))
    wh = generator.uniform(0.5, 60.0, size=(n, 2))
    return [BBox(x, y, w, h) for (x, y), (w, h) in zip(xy, wh)]

class TestGeometry(TestCase):
    def test_area(self):
        self.assertEqual(area(BBox(0, 0, 1, 1)), 1.0)
        self.assertEqual(area(BBox(0, 0, 2, 2)), 4.0)
        self.assertEqual(area(BBox(3.5, -1, 2, 0.5)), 1.0)

    def test_invalid_boxes(self):
        for fields in [(0, 0, 0, 1), (0, 0, 1, -1), (float('nan'), 0, 1, 1), (0, float('inf'), 1, 1)]:
            with self.assertRaises(ValueError):
                BBox(*fields)

    def test_iou_values(self):
        self.assertEqual(iou(BBox(0, 0, 4, 4), BBox(0, 0, 4, 4)), 1.0)
        self.assertEqual(iou(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)), 0.0)
        np.testing.assert_almost_equal(iou(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2)), 1.0 / 3.0, decimal=12)
        # Touching edges do not overlap.
        self.assertEqual(iou(BBox(0, 0, 1, 1), BBox(1, 0, 1, 1)), 0.0)

    def test_iof_values(self):
        self.assertEqual(iof(BBox(1, 1, 2, 2), BBox(0, 0, 10, 10)), 1.0)
        self.assertEqual(iof(BBox(0, 0, 1, 1), BBox(5, 5, 1, 1)), 0.0)
        self.assertEqual(iof(BBox(0, 0, 2, 2), BBox(1, 0, 2, 2)), 0.5)

    def test_iou_properties(self):
        generator = np.random.default_rng(3)
        boxes = random_boxes(generator, 60)
        for a in boxes:
            self.assertEqual(iou(a, a), 1.0)
            for b in boxes:
                u = iou(a, b)
                self.assertEqual(u, iou(b, a))
                self.assertTrue(0.0 <= u <= 1.0)
                self.assertLessEqual(u, min(iof(a, b), iof(b, a)) + 1e-15)
                if a != b:
                    self.assertLess(u, 1.0)

    def test_iou_matrix_matches_scalar(self):
        generator = np.random.default_rng(4)
        a, b = random_boxes(generator, 20), random_boxes(generator, 15)
        ious = iou_matrix(boxes_to_array(a), boxes_to_array(b))
        iofs = iof_matrix(boxes_to_array(a), boxes_to_array(b))
        for i in range(len(a)):
            for j in range(len(b)):
                self.assertEqual(ious[i, j], iou(a[i], b[j]))
                self.assertEqual(iofs[i, j], iof(a[i], b[j]))
        self.assertEqual(boxes_to_array([]).shape, (0, 4))

    def test_encode_relative(self):
        reference = BBox(0, 0, 10, 10)
        self.assertEqual(encode_relative(reference, reference), RelCoeffs(0.0, 0.0, 0.0, 0.0))
        coeffs = encode_relative(BBox(2, 0, 10, 10), reference)
        np.testing.assert_array_almost_equal(coeffs, [0.2, 0.0, 0.0, 0.0], decimal=12)
        coeffs = encode_relative(BBox(-5, 0, 20, 10), reference)
        np.testing.assert_almost_equal(coeffs.dw, 0.693147, decimal=6)
        self.assertEqual(coeffs.dx, 0.0)

    def test_decode_relative(self):
        generator = np.random.default_rng(5)
        for reference in random_boxes(generator, 20):
            self.assertEqual(decode_relative((0, 0, 0, 0), reference), reference)
        decoded = decode_relative((0, 0, math.log(2), 0), BBox(0, 0, 10, 10))
        np.testing.assert_array_almost_equal(decoded.to_list(), [-5.0, 0.0, 20.0, 10.0], decimal=12)
        np.testing.assert_almost_equal(decoded.cx, 5.0, decimal=12)
        target = BBox(2, 0, 10, 10)
        decoded = decode_relative(encode_relative(target, BBox(0, 0, 10, 10)), BBox(0, 0, 10, 10))
        np.testing.assert_allclose(decoded.to_list(), target.to_list(), rtol=0, atol=1e-9)

    def test_round_trip(self):
        generator = np.random.default_rng(6)
        boxes = random_boxes(generator, 40)
        for t, r in zip(boxes[:20], boxes[20:]):
            decoded = decode_relative(encode_relative(t, r), r)
            np.testing.assert_allclose(decoded.to_list(), t.to_list(), rtol=0, atol=1e-9)

    def test_gaussian_likelihood(self):
        mean = RelCoeffs(0.1, -0.2, 0.05, 0.0)
        self.assertEqual(gaussian_likelihood(mean, mean, 0.2), 1.0)
        sigma = 0.3
        rel = (0.1 + sigma, -0.2 + sigma, 0.05, 0.0)
        np.testing.assert_almost_equal(gaussian_likelihood(rel, mean, sigma), math.exp(-1.0), decimal=12)
        np.testing.assert_almost_equal(gaussian_likelihood((0.2, 0, 0, 0), (0, 0, 0, 0), 0.2), 0.606530, decimal=6)
        values = [gaussian_likelihood((d, 0, 0, 0), (0, 0, 0, 0), 0.2) for d in np.linspace(0.0, 1.0, 11)]
        self.assertTrue(all(a > b for a, b in zip(values, values[1:])))
        for sigma in [0.0, -1.0]:
            with self.assertRaises(ValueError):
                gaussian_likelihood(mean, mean, sigma)

if __name__ == '__main__':
    unittest.main()
