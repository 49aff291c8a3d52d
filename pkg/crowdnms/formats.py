"""
Line-delimited JSON scene and detection files.

Every record sits on its own line and may not contain a newline itself, so files stream one image at a time.
Boxes are serialized as ``[x, y, w, h]`` with ``(x, y)`` the top-left corner. Floats are written with the
shortest decimal that round-trips.

Scene file record::

    {"image_id":"synth-000000","width":1024.0,"height":512.0,"gt":[[x,y,w,h],...],"ignore":[[x,y,w,h],...]}

Detection file record::

    {"image_id":"synth-000000","detections":[{"bbox":[x,y,w,h],"score":0.93,"density":0.55,"mu":[dx,dy,dw,dh]},...]}

``density`` and ``mu`` are optional, and ``mu`` is only allowed alongside ``density``.
"""
import json
import logging
import math
from crowdnms.geometry import BBox
from crowdnms.datasets import GroundTruthScene
from crowdnms.suppression import Detection

logger = logging.getLogger(__name__)

class RecordError(ValueError):
    """
    A malformed record, located by file, line and field.
    """
    def __init__(self, message, path=None, line=None, field=None):
        self.message = message
        self.path = path
        self.line = line
        self.field = field
        where = ''
        if path is not None:
            where = '%s:%s: ' % (path, line) if line is not None else '%s: ' % path
        what = 'field %r: ' % field if field is not None else ''
        super().__init__(where + what + message)

def _dumps(record):
    return json.dumps(record, separators=(',', ':'), ensure_ascii=False, allow_nan=False)

def _field(record, name, required=True):
    if not isinstance(record, dict):
        raise RecordError('expected an object', field=name)
    if name not in record:
        if required:
            raise RecordError('missing', field=name)
        return None
    return record[name]

def _number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RecordError('expected a number, got %r' % (value,), field=name)
    try:
        value = float(value)
    except OverflowError:
        raise RecordError('number too large for a float', field=name)
    if not math.isfinite(value):
        raise RecordError('expected a finite number, got %r' % (value,), field=name)
    return value

def _box(value, name):
    if not isinstance(value, list) or len(value) != 4:
        raise RecordError('expected [x, y, w, h], got %r' % (value,), field=name)
    try:
        return BBox(*[_number(v, name) for v in value])
    except RecordError:
        raise
    except ValueError as error:
        raise RecordError(str(error), field=name)

def _boxes(value, name):
    if not isinstance(value, list):
        raise RecordError('expected an array of boxes', field=name)
    return [_box(v, '%s[%d]' % (name, i)) for i, v in enumerate(value)]

def scene_to_record(scene):
    return {'image_id': scene.image_id, 'width': scene.width, 'height': scene.height,
            'gt': [b.to_list() for b in scene.gt_boxes], 'ignore': [b.to_list() for b in scene.ignore_boxes]}

def scene_from_record(record):
    """
    Builds a :class:`GroundTruthScene` from a parsed scene record; raises :class:`RecordError` naming the field.
    """
    image_id = _field(record, 'image_id')
    if not isinstance(image_id, str):
        raise RecordError('expected a string', field='image_id')
    width = _number(_field(record, 'width'), 'width')
    height = _number(_field(record, 'height'), 'height')
    gt = _boxes(_field(record, 'gt'), 'gt')
    ignore = _field(record, 'ignore', required=False)
    ignore = [] if ignore is None else _boxes(ignore, 'ignore')
    try:
        return GroundTruthScene(image_id, width, height, gt, ignore)
    except ValueError as error:
        raise RecordError(str(error), field='width')

def detection_to_record(detection):
    record = {'bbox': detection.box.to_list(), 'score': detection.score}
    if detection.density is not None:
        record['density'] = detection.density
    if detection.noh_mean is not None:
        record['mu'] = list(detection.noh_mean)
    return record

def detections_to_record(image_id, detections):
    return {'image_id': image_id, 'detections': [detection_to_record(d) for d in detections]}

def detections_from_record(record):
    """
    Builds the detections of a parsed detection record, numbered by their position in the array.

    :param dict record: The parsed record.
    :return: **image_id, detections**: The image id and a list of :class:`Detection`.
    """
    image_id = _field(record, 'image_id')
    if not isinstance(image_id, str):
        raise RecordError('expected a string', field='image_id')
    items = _field(record, 'detections')
    if not isinstance(items, list):
        raise RecordError('expected an array', field='detections')
    detections = []
    for i, item in enumerate(items):
        prefix = 'detections[%d].' % i
        if not isinstance(item, dict):
            raise RecordError('expected an object', field='detections[%d]' % i)
        box = _box(_field(item, 'bbox'), prefix + 'bbox')
        score = _number(_field(item, 'score'), prefix + 'score')
        density = item.get('density')
        density = None if density is None else _number(density, prefix + 'density')
        mu = item.get('mu')
        if mu is not None:
            if not isinstance(mu, list) or len(mu) != 4:
                raise RecordError('expected an array of 4 numbers', field=prefix + 'mu')
            if density is None:
                raise RecordError('mu requires a density', field=prefix + 'mu')
            mu = [_number(v, prefix + 'mu') for v in mu]
        try:
            detections.append(Detection(box, score, density=density, noh_mean=mu, source_index=i))
        except ValueError as error:
            field = 'score' if 'score' in str(error) else 'density'
            raise RecordError(str(error), field=prefix + field)
    return image_id, detections

def iter_json_lines(path):
    """
    Yields ``(line_number, record)`` for every non-blank line of a UTF-8 JSON lines file.
    """
    with open(path, 'rb') as handle:
        for number, raw in enumerate(handle, start=1):
            try:
                line = raw.decode('utf-8')
            except UnicodeDecodeError as error:
                raise RecordError('invalid UTF-8 at byte %d' % error.start, path=path, line=number)
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError as error:
                raise RecordError('invalid JSON (%s)' % getattr(error, 'msg', error), path=path, line=number)
            yield number, record

def write_json_lines(path, records):
    """
    Writes one compact JSON record per line, LF terminated.
    """
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        for record in records:
            handle.write(_dumps(record))
            handle.write('\n')
            count += 1
    logger.debug('wrote %d records to %s.', count, path)
    return count

def _parse(path, builder):
    for number, record in iter_json_lines(path):
        try:
            yield builder(record)
        except RecordError as error:
            raise RecordError(error.message, path=path, line=number, field=error.field)

def _check_unique(ids, path):
    seen = set()
    for image_id in ids:
        if image_id in seen:
            raise RecordError('duplicate image_id %r' % (image_id,), path=path)
        seen.add(image_id)

def read_scenes(path):
    """
    Reads a scene file.

    :param str path: The file.
    :return: **scenes**: A list of :class:`GroundTruthScene` in file order.
    """
    scenes = list(_parse(path, scene_from_record))
    _check_unique([s.image_id for s in scenes], path)
    logger.debug('read %d scenes from %s.', len(scenes), path)
    return scenes

def write_scenes(path, scenes):
    return write_json_lines(path, (scene_to_record(s) for s in scenes))

def read_detections(path):
    """
    Reads a detection file.

    :param str path: The file.
    :return: **records**: A list of ``(image_id, detections)`` pairs in file order.
    """
    records = list(_parse(path, detections_from_record))
    _check_unique([image_id for image_id, _ in records], path)
    logger.debug('read %d detection records from %s.', len(records), path)
    return records

def write_detections(path, records):
    """
    Writes ``(image_id, detections)`` pairs as a detection file.
    """
    return write_json_lines(path, (detections_to_record(image_id, dets) for image_id, dets in records))
