"""Synthetic crowded scenes, their pre-NMS proposals, and the ground-truth hallucination oracle."""
import logging
import math
import zlib
import numpy as np
from scipy.optimize import brentq
from crowdnms.geometry import BBox, RelCoeffs, iou, encode_relative, decode_relative, boxes_to_array, iou_matrix
from crowdnms.suppression import Detection

logger = logging.getLogger(__name__)

SEPARATION_IOU = 0.3
PAIR_TOLERANCE = 0.02
MAX_LOG_SCALE = 0.15

class GroundTruthScene(object):
    """
    Per-image annotations.

    :param str image_id: Unique image identifier.
    :param float width: Image width in pixels.
    :param float height: Image height in pixels.
    :param list gt_boxes: Ground-truth :class:`BBox` objects.
    :param list ignore_boxes: Ignore regions (statues, posters, ...), as :class:`BBox` objects.
    :param list partners: For generated scenes, the index of each box's designated overlapping partner, or -1.
    """
    def __init__(self, image_id, width, height, gt_boxes, ignore_boxes=None, partners=None):
        self.image_id = str(image_id)
        self.width = float(width)
        self.height = float(height)
        if not (math.isfinite(self.width) and math.isfinite(self.height) and self.width > 0 and self.height > 0):
            raise ValueError('GroundTruthScene: image %s must have a positive finite size.' % self.image_id)
        self.gt_boxes = list(gt_boxes)
        self.ignore_boxes = [] if ignore_boxes is None else list(ignore_boxes)
        self.partners = [-1] * len(self.gt_boxes) if partners is None else list(partners)
    def __eq__(self, other):
        if not isinstance(other, GroundTruthScene):
            return NotImplemented
        return (self.image_id == other.image_id and self.width == other.width and self.height == other.height
                and self.gt_boxes == other.gt_boxes and self.ignore_boxes == other.ignore_boxes)
    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result
    __hash__ = None
    def __repr__(self):
        return 'GroundTruthScene(%r, %d gt, %d ignore)' % (self.image_id, len(self.gt_boxes), len(self.ignore_boxes))

def _check_range(name, value, lower=None, upper=None, integer=False):
    lo, hi = value
    if integer and (int(lo) != lo or int(hi) != hi):
        raise ValueError('GeneratorConfig: %s must hold integers, got %r.' % (name, value))
    if lo > hi:
        raise ValueError('GeneratorConfig: %s must be well-ordered, got %r.' % (name, value))
    if lower is not None and lo < lower:
        raise ValueError('GeneratorConfig: %s must not go below %r, got %r.' % (name, lower, value))
    if upper is not None and hi > upper:
        raise ValueError('GeneratorConfig: %s must not exceed %r, got %r.' % (name, upper, value))
    return (int(lo), int(hi)) if integer else (float(lo), float(hi))

class GeneratorConfig(object):
    """
    Settings of the synthetic crowded-scene generator. Below are details of its constructor.

    :param int scenes: Number of scenes.
    :param tuple gt_per_scene: Inclusive ``(min, max)`` number of ground-truth boxes per scene.
    :param float overlap_pair_fraction: Fraction of the boxes of a scene placed in overlapping pairs.
    :param tuple pair_iou_range: ``(min, max)`` target IoU of an overlapping pair, inside (0, 1).
    :param int proposals_per_gt: Number of proposals spawned around each ground-truth box.
    :param float jitter_center_std: Std of the proposal center offset, as a fraction of the box size.
    :param float jitter_logsize_std: Std of the proposal log width and log height offsets.
    :param float score_noise_std: Std of the Gaussian noise added to the IoU-anchored proposal score.
    :param int seed: Random number generator seed.
    :param float image_width: Image width in pixels.
    :param float image_height: Image height in pixels.
    :param tuple height_range: ``(min, max)`` person height in pixels.
    :param float aspect_ratio: Person width over height.
    :param tuple ignore_per_scene: Inclusive ``(min, max)`` number of ignore regions per scene.
    :param int max_attempts: Rejection attempts allowed per placed box before giving up.
    :param bool verbose: When ``True``, per-scene diagnostics are logged at INFO instead of DEBUG.
    """
    def __init__(self, scenes=100, gt_per_scene=(10, 30), overlap_pair_fraction=0.5, pair_iou_range=(0.5, 0.7),
                 proposals_per_gt=8, jitter_center_std=0.05, jitter_logsize_std=0.05, score_noise_std=0.05, seed=0,
                 image_width=1024.0, image_height=512.0, height_range=(40.0, 160.0), aspect_ratio=0.41,
                 ignore_per_scene=(0, 2), max_attempts=1000, verbose=False):
        if int(scenes) != scenes or scenes <= 0:
            raise ValueError('GeneratorConfig: scenes must be a positive integer, got %r.' % (scenes,))
        self.scenes = int(scenes)
        self.gt_per_scene = _check_range('gt_per_scene', gt_per_scene, lower=1, integer=True)
        if not 0.0 <= overlap_pair_fraction <= 1.0:
            raise ValueError('GeneratorConfig: overlap_pair_fraction must lie in [0, 1], got %r.' % (overlap_pair_fraction,))
        self.overlap_pair_fraction = float(overlap_pair_fraction)
        self.pair_iou_range = _check_range('pair_iou_range', pair_iou_range)
        if not (0.0 < self.pair_iou_range[0] and self.pair_iou_range[1] < 1.0):
            raise ValueError('GeneratorConfig: pair_iou_range must lie inside (0, 1), got %r.' % (pair_iou_range,))
        if int(proposals_per_gt) != proposals_per_gt or proposals_per_gt <= 0:
            raise ValueError('GeneratorConfig: proposals_per_gt must be a positive integer, got %r.' % (proposals_per_gt,))
        self.proposals_per_gt = int(proposals_per_gt)
        for name, value in (('jitter_center_std', jitter_center_std), ('jitter_logsize_std', jitter_logsize_std),
                            ('score_noise_std', score_noise_std)):
            if not value >= 0:
                raise ValueError('GeneratorConfig: %s must be non-negative, got %r.' % (name, value))
        self.jitter_center_std = float(jitter_center_std)
        self.jitter_logsize_std = float(jitter_logsize_std)
        self.score_noise_std = float(score_noise_std)
        self.seed = int(seed)
        if not (0 < image_width < math.inf and 0 < image_height < math.inf):
            raise ValueError('GeneratorConfig: image size must be positive and finite, got %r x %r.' % (image_width, image_height))
        self.image_width = float(image_width)
        self.image_height = float(image_height)
        self.height_range = _check_range('height_range', height_range)
        if self.height_range[0] <= 0:
            raise ValueError('GeneratorConfig: height_range must be positive, got %r.' % (height_range,))
        if not aspect_ratio > 0:
            raise ValueError('GeneratorConfig: aspect_ratio must be positive, got %r.' % (aspect_ratio,))
        self.aspect_ratio = float(aspect_ratio)
        self.ignore_per_scene = _check_range('ignore_per_scene', ignore_per_scene, lower=0, integer=True)
        if int(max_attempts) != max_attempts or max_attempts <= 0:
            raise ValueError('GeneratorConfig: max_attempts must be a positive integer, got %r.' % (max_attempts,))
        self.max_attempts = int(max_attempts)
        self.verbose = verbose

class OracleConfig(object):
    """
    Imprecision of the hallucination oracle that stands in for a trained nearby-object head.

    :param float mean_noise_std: Std of the Gaussian noise added to each hallucinated coefficient.
    :param float density_noise_std: Std of the Gaussian noise added to the density.
    :param bool perfect: When ``True`` both stds are forced to zero.
    :param int seed: Random number generator seed of the noise.
    """
    def __init__(self, mean_noise_std=0.05, density_noise_std=0.05, perfect=False, seed=0):
        if not (mean_noise_std >= 0 and density_noise_std >= 0):
            raise ValueError('OracleConfig: noise stds must be non-negative, got %r and %r.' % (mean_noise_std, density_noise_std))
        self.perfect = bool(perfect)
        self.mean_noise_std = 0.0 if self.perfect else float(mean_noise_std)
        self.density_noise_std = 0.0 if self.perfect else float(density_noise_std)
        self.seed = int(seed)

def _image_stream(seed, image_id, stream):
    return np.random.default_rng([seed, zlib.crc32(image_id.encode('utf-8')), stream])

def _random_box(generator, config):
    h = generator.uniform(config.height_range[0], config.height_range[1])
    w = config.aspect_ratio * h
    if w >= config.image_width or h >= config.image_height:
        raise RuntimeError('generate_scene: boxes of height %.1f do not fit a %gx%g image.' % (h, config.image_width, config.image_height))
    x = generator.uniform(0.0, config.image_width - w)
    y = generator.uniform(0.0, config.image_height - h)
    return BBox(x, y, w, h)

def _inside(box, config):
    return box.x >= 0.0 and box.y >= 0.0 and box.x2 <= config.image_width and box.y2 <= config.image_height

def _separated(box, others):
    return all(iou(box, other) < SEPARATION_IOU for other in others)

def _place_partner(anchor, target, generator):
    """
    Places a box overlapping ``anchor`` with IoU ``target``: draws a scale whose concentric IoU exceeds the
    target, draws a direction, and solves for the offset along it.
    """
    log_limit = min(MAX_LOG_SCALE, max(0.0, -0.5 * math.log(min(1.0, target + PAIR_TOLERANCE))))
    scale = math.exp(generator.uniform(-log_limit, log_limit))
    angle = generator.uniform(0.0, 2.0 * math.pi)
    w, h = scale * anchor.w, scale * anchor.h
    ux, uy = math.cos(angle) * anchor.w, math.sin(angle) * anchor.h

    def partner(distance):
        return BBox(anchor.cx + distance * ux - 0.5 * w, anchor.cy + distance * uy - 0.5 * h, w, h)

    def gap(distance):
        return iou(anchor, partner(distance)) - target

    far = 1.5 * (1.0 + scale)
    if gap(0.0) <= 0.0:
        return partner(0.0)
    distance = brentq(gap, 0.0, far, xtol=1e-10)
    return partner(distance)

def generate_scene(config, scene_index):
    """
    Generates one crowded scene. A fraction of the boxes is placed in designated pairs whose IoU falls within
    ``pair_iou_range``; every two boxes that are not partners keep an IoU below 0.3. Deterministic given
    ``(config.seed, scene_index)``.

    :param GeneratorConfig config: The generator settings.
    :param int scene_index: Index of the scene; also names it ``synth-<index>``.
    :return: **scene**: A :class:`GroundTruthScene`.
    """
    generator = np.random.default_rng([config.seed, int(scene_index)])
    n = int(generator.integers(config.gt_per_scene[0], config.gt_per_scene[1] + 1))
    pairs = int(round(config.overlap_pair_fraction * n)) // 2
    boxes, partners = [], []
    rejected = 0
    for p in range(pairs):
        for attempt in range(config.max_attempts):
            anchor = _random_box(generator, config)
            target = generator.uniform(config.pair_iou_range[0], config.pair_iou_range[1])
            mate = _place_partner(anchor, target, generator)
            if (_inside(mate, config) and abs(iou(anchor, mate) - target) <= PAIR_TOLERANCE
                    and _separated(anchor, boxes) and _separated(mate, boxes)):
                partners.extend([len(boxes) + 1, len(boxes)])
                boxes.extend([anchor, mate])
                break
            rejected += 1
        else:
            raise RuntimeError('generate_scene: could not place overlapping pair %d of scene %d after %d attempts; '
                               'the generator settings are too tight.' % (p, scene_index, config.max_attempts))
    while len(boxes) < n:
        for attempt in range(config.max_attempts):
            box = _random_box(generator, config)
            if _separated(box, boxes):
                boxes.append(box)
                partners.append(-1)
                break
            rejected += 1
        else:
            raise RuntimeError('generate_scene: could not place box %d of scene %d after %d attempts; '
                               'the generator settings are too tight.' % (len(boxes), scene_index, config.max_attempts))
    ignore = []
    n_ignore = int(generator.integers(config.ignore_per_scene[0], config.ignore_per_scene[1] + 1))
    while len(ignore) < n_ignore:
        for attempt in range(config.max_attempts):
            box = _random_box(generator, config)
            if _separated(box, boxes):
                ignore.append(box)
                break
            rejected += 1
        else:
            raise RuntimeError('generate_scene: could not place ignore region %d of scene %d after %d attempts.'
                               % (len(ignore), scene_index, config.max_attempts))
    logger.log(logging.INFO if config.verbose else logging.DEBUG,
               'scene %d: %d boxes (%d pairs), %d ignore regions, %d rejected placements.',
               scene_index, n, pairs, n_ignore, rejected)
    return GroundTruthScene('synth-%06d' % int(scene_index), config.image_width, config.image_height,
                            boxes, ignore, partners)

def generate_scenes(config):
    """
    Generates ``config.scenes`` scenes.

    :param GeneratorConfig config: The generator settings.
    :return: **scenes**: A list of :class:`GroundTruthScene`.
    """
    return [generate_scene(config, i) for i in range(config.scenes)]

def generate_proposals(scene, config):
    """
    Spawns ``proposals_per_gt`` proposals around every ground-truth box: center and log-size jitter in
    relative coefficients, and a score equal to the IoU with the spawning box plus Gaussian noise, clamped to
    [0.01, 1]. Each proposal records the index of the box that spawned it. Deterministic given the seed and the
    image id.

    :param GroundTruthScene scene: The scene.
    :param GeneratorConfig config: The generator settings.
    :return: **detections**: A list of :class:`Detection` without side-channel, ordered by spawning box.
    """
    generator = _image_stream(config.seed, scene.image_id, 1)
    n, p = len(scene.gt_boxes), config.proposals_per_gt
    centers = generator.normal(0.0, config.jitter_center_std, size=(n, p, 2))
    logsizes = generator.normal(0.0, config.jitter_logsize_std, size=(n, p, 2))
    noise = generator.normal(0.0, config.score_noise_std, size=(n, p))
    detections = []
    for g, gt in enumerate(scene.gt_boxes):
        for k in range(p):
            box = decode_relative((centers[g, k, 0], centers[g, k, 1], logsizes[g, k, 0], logsizes[g, k, 1]), gt)
            score = min(1.0, max(0.01, iou(box, gt) + float(noise[g, k])))
            detections.append(Detection(box, score, source_index=len(detections), gt_index=g))
    return detections

def annotate_oracle(detections, scene, oracle):
    """
    Attaches the hallucination side-channel the nearby-object head would predict. For a detection spawned by
    ground-truth box g, the target g* is the other ground-truth box overlapping g the most; the density is
    ``iou(g, g*)`` and the mean is g* encoded relative to the detection box, each with optional Gaussian noise.
    The mean is left out when there is no g* or the density ends at zero.

    :param list detections: Detections carrying ``gt_index``.
    :param GroundTruthScene scene: The scene that spawned them.
    :param OracleConfig oracle: Noise settings.
    :return: **detections**: A new list of :class:`Detection` with ``density`` and ``noh_mean`` set.
    """
    generator = _image_stream(oracle.seed, scene.image_id, 2)
    n_gt = len(scene.gt_boxes)
    nearest, nearest_iou = np.full(n_gt, -1), np.zeros(n_gt)
    if n_gt > 1:
        overlaps = iou_matrix(boxes_to_array(scene.gt_boxes), boxes_to_array(scene.gt_boxes))
        np.fill_diagonal(overlaps, -1.0)
        nearest = np.argmax(overlaps, axis=1)
        nearest_iou = np.array([iou(scene.gt_boxes[g], scene.gt_boxes[nearest[g]]) for g in range(n_gt)])
    density_noise = generator.normal(0.0, oracle.density_noise_std, size=len(detections))
    mean_noise = generator.normal(0.0, oracle.mean_noise_std, size=(len(detections), 4))
    annotated = []
    for i, d in enumerate(detections):
        g = d.gt_index
        if g is None or not 0 <= g < n_gt:
            raise ValueError('annotate_oracle: detection %d of image %s has no spawning ground-truth box.' % (d.source_index, scene.image_id))
        if n_gt == 1:
            annotated.append(d.replace(density=0.0, noh_mean=None))
            continue
        density = min(1.0, max(0.0, nearest_iou[g] + float(density_noise[i])))
        mean = None
        if density > 0.0:
            exact = encode_relative(scene.gt_boxes[nearest[g]], d.box)
            mean = RelCoeffs(*[c + float(e) for c, e in zip(exact, mean_noise[i])])
        annotated.append(d.replace(density=density, noh_mean=mean))
    return annotated

def verify_oracle(scene, detections, atol=1e-6):
    """
    Checks that every hallucinated mean decodes to one of the scene's ground-truth boxes, as a perfect oracle
    guarantees.

    :param GroundTruthScene scene: The scene.
    :param list detections: Annotated detections.
    :param float atol: Absolute tolerance per box field.
    :return: **failures**: Source indices of detections whose mean decodes to no ground-truth box.
    """
    gt = boxes_to_array(scene.gt_boxes)
    failures = []
    for d in detections:
        if d.noh_mean is None:
            continue
        decoded = np.array(decode_relative(d.noh_mean, d.box).to_list())
        if len(gt) == 0 or not np.any(np.all(np.abs(gt - decoded) <= atol, axis=1)):
            failures.append(d.source_index)
    return failures

def crowd_statistics(scenes):
    """
    Describes how crowded a set of scenes is.

    :param list scenes: A list of :class:`GroundTruthScene`.
    :return: **statistics**: A dict with ``images``, ``persons_per_image``, ``overlaps_per_image`` (pairs with
        IoU above 0.5) and ``mean_density`` (mean over boxes of the largest IoU with another box).
    """
    persons, overlapping, densities = 0, 0, []
    for scene in scenes:
        n = len(scene.gt_boxes)
        persons += n
        if n < 2:
            densities.extend([0.0] * n)
            continue
        overlaps = iou_matrix(boxes_to_array(scene.gt_boxes), boxes_to_array(scene.gt_boxes))
        np.fill_diagonal(overlaps, 0.0)
        overlapping += int(np.count_nonzero(np.triu(overlaps, 1) > 0.5))
        densities.extend(overlaps.max(axis=1).tolist())
    images = len(scenes)
    return {'images': images,
            'persons_per_image': persons / images if images else 0.0,
            'overlaps_per_image': overlapping / images if images else 0.0,
            'mean_density': float(np.mean(densities)) if densities else 0.0}
