from unittest import TestCase
import unittest
import os
import tempfile
from crowdnms.geometry import BBox
from crowdnms.suppression import Detection
from crowdnms.datasets import GeneratorConfig, OracleConfig, generate_scenes, generate_proposals, annotate_oracle
from crowdnms.formats import (RecordError, read_scenes, write_scenes, read_detections, write_detections,
                              scene_from_record, detections_from_record)

class TestFormats(TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.addCleanup(self.directory.cleanup)

    def path(self, name):
        return os.path.join(self.directory.name, name)

    def write_text(self, name, text):
        with open(self.path(name), 'w', encoding='utf-8', newline='\n') as handle:
            handle.write(text)
        return self.path(name)

    def test_round_trip(self):
        config = GeneratorConfig(scenes=3, seed=8)
        scenes = generate_scenes(config)
        records = [(s.image_id, annotate_oracle(generate_proposals(s, config), s, OracleConfig(seed=1))) for s in scenes]
        write_scenes(self.path('scenes.jsonl'), scenes)
        write_detections(self.path('dets.jsonl'), records)
        self.assertEqual(read_scenes(self.path('scenes.jsonl')), scenes)
        parsed = read_detections(self.path('dets.jsonl'))
        self.assertEqual([image_id for image_id, _ in parsed], [s.image_id for s in scenes])
        for (_, original), (_, restored) in zip(records, parsed):
            self.assertEqual([d.replace(gt_index=None) for d in original], restored)

    def test_one_record_per_line(self):
        detections = [Detection(BBox(0.1, 0.2, 3.0, 4.0), 0.5, source_index=0),
                      Detection(BBox(1, 2, 3, 4), 1.0, density=0.25, noh_mean=(0.1, 0, -0.5, 0.25), source_index=1)]
        write_detections(self.path('d.jsonl'), [('x', detections), ('y', [])])
        with open(self.path('d.jsonl'), 'rb') as handle:
            lines = handle.read().split(b'\n')
        self.assertEqual(len(lines), 3)
        self.assertEqual(lines[2], b'')
        self.assertEqual(lines[1], b'{"image_id":"y","detections":[]}')
        self.assertIn(b'"bbox":[0.1,0.2,3.0,4.0],"score":0.5}', lines[0])
        self.assertIn(b'"density":0.25,"mu":[0.1,0.0,-0.5,0.25]', lines[0])

    def test_parse_errors_name_line_and_field(self):
        path = self.write_text('bad.jsonl', '{"image_id":"a","detections":[]}\n'
                                            '{"image_id":"b","detections":[{"bbox":[0,0,1,1],"score":2.0}]}\n')
        with self.assertRaises(RecordError) as raised:
            read_detections(path)
        self.assertEqual(raised.exception.line, 2)
        self.assertEqual(raised.exception.field, 'detections[0].score')
        self.assertIn('bad.jsonl:2', str(raised.exception))

        path = self.write_text('box.jsonl', '\n{"image_id":"a","width":10,"height":10,"gt":[[0,0,0,1]],"ignore":[]}\n')
        with self.assertRaises(ValueError) as raised:
            read_scenes(path)
        self.assertEqual(raised.exception.line, 2)
        self.assertEqual(raised.exception.field, 'gt[0]')

        path = self.write_text('json.jsonl', '{"image_id": "a", \n')
        with self.assertRaises(RecordError) as raised:
            read_scenes(path)
        self.assertEqual(raised.exception.line, 1)

    def test_huge_and_non_finite_numbers(self):
        path = self.write_text('huge.jsonl', '{"image_id":"a","detections":[]}\n'
                                             '{"image_id":"b","detections":[{"bbox":[0,0,%s,1],"score":0.5}]}\n' % ('9' * 400))
        with self.assertRaises(RecordError) as raised:
            read_detections(path)
        self.assertEqual(raised.exception.line, 2)
        self.assertEqual(raised.exception.field, 'detections[0].bbox')
        self.assertIn('huge.jsonl:2', str(raised.exception))

        path = self.write_text('inf.jsonl', '{"image_id":"a","width":Infinity,"height":10,"gt":[]}\n')
        with self.assertRaises(RecordError) as raised:
            read_scenes(path)
        self.assertEqual(raised.exception.line, 1)
        self.assertEqual(raised.exception.field, 'width')

        path = self.write_text('nan.jsonl', '{"image_id":"a","detections":[{"bbox":[0,0,1,1],"score":NaN}]}\n')
        with self.assertRaises(RecordError) as raised:
            read_detections(path)
        self.assertEqual(raised.exception.field, 'detections[0].score')

    def test_invalid_utf8_names_line(self):
        with open(self.path('bytes.jsonl'), 'wb') as handle:
            handle.write(b'{"image_id":"a","detections":[]}\n\xff\n{"image_id":"b","detections":[]}\n')
        with self.assertRaises(RecordError) as raised:
            read_detections(self.path('bytes.jsonl'))
        self.assertEqual(raised.exception.line, 2)
        self.assertIn('bytes.jsonl:2', str(raised.exception))
        self.assertIn('UTF-8', str(raised.exception))

    def test_field_checks(self):
        with self.assertRaises(RecordError):
            scene_from_record({'image_id': 'a', 'width': 10, 'height': 10})
        with self.assertRaises(RecordError):
            scene_from_record({'image_id': 3, 'width': 10, 'height': 10, 'gt': []})
        with self.assertRaises(RecordError):
            detections_from_record({'image_id': 'a', 'detections': [{'bbox': [0, 0, 1, 1], 'score': 0.5, 'mu': [0, 0, 0, 0]}]})
        with self.assertRaises(RecordError):
            detections_from_record({'image_id': 'a', 'detections': [{'bbox': [0, 0, 1], 'score': 0.5}]})
        with self.assertRaises(RecordError):
            detections_from_record({'image_id': 'a', 'detections': [{'bbox': [0, 0, 1, 1], 'score': True}]})
        scene = scene_from_record({'image_id': 'a', 'width': 10, 'height': 10, 'gt': [[1, 2, 3, 4]]})
        self.assertEqual(scene.ignore_boxes, [])
        self.assertEqual(scene.gt_boxes, [BBox(1, 2, 3, 4)])

    def test_duplicate_image(self):
        path = self.write_text('dup.jsonl', '{"image_id":"a","detections":[]}\n{"image_id":"a","detections":[]}\n')
        with self.assertRaises(RecordError):
            read_detections(path)

if __name__ == '__main__':
    unittest.main()
