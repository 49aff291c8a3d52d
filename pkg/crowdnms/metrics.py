"""Pedestrian-detection evaluation: greedy matching with ignore regions, AP, Recall@k and MR^-2."""
import logging
import numpy as np
import pandas as pd
from crowdnms.geometry import boxes_to_array, iou_matrix, iof_matrix

logger = logging.getLogger(__name__)

TP = 'TP'
FP = 'FP'
IGNORED = 'IGNORED'

MISS_RATE_FLOOR = 1e-10
FPPI_REFERENCES = tuple(10.0 ** (-2.0 + i / 4.0) for i in range(9))
NO_GROUND_TRUTH = 'no-ground-truth'

CONVENTIONS = (
    ('ap', 'all-points interpolation (PASCAL VOC 2010+)'),
    ('matching', 'greedy in score order, IoU >= threshold, ties to the lowest gt index'),
    ('ignore', 'unmatched detections with IoF >= threshold against an ignore region are dropped'),
    ('recall', 'per image top-k by score before matching'),
    ('mr2', '9 FPPI references 10^(-2+i/4); miss rate 1.0 below the curve; floor 1e-10; geometric mean'),
)

class MatchOutcome(object):
    """
    Result of matching the detections of one image.

    :param list flags: One of :data:`TP`, :data:`FP` or :data:`IGNORED` per detection, in the order given.
    :param numpy.ndarray gt_matched: Boolean array, one entry per ground-truth box.
    :param list assignments: Index of the ground-truth box each detection matched, or -1.
    """
    def __init__(self, flags, gt_matched, assignments):
        self.flags = list(flags)
        self.gt_matched = np.asarray(gt_matched, dtype=bool)
        self.assignments = list(assignments)
    @property
    def tp(self):
        return self.flags.count(TP)
    @property
    def fp(self):
        return self.flags.count(FP)
    @property
    def ignored(self):
        return self.flags.count(IGNORED)
    def __repr__(self):
        return 'MatchOutcome(tp=%d, fp=%d, ignored=%d, gt=%d)' % (self.tp, self.fp, self.ignored, len(self.gt_matched))

def _as_boxes(items):
    return boxes_to_array([getattr(item, 'box', item) for item in items])

def match_image(detections, gt_boxes, ignore_boxes=(), iou_threshold=0.5):
    """
    Greedy matching in the given order. Each detection takes the unmatched ground-truth box with the highest IoU
    (ties to the lowest index) if that IoU reaches ``iou_threshold``; otherwise it is ignored when its IoF with an
    ignore region reaches the threshold, and a false positive if not.

    :param list detections: :class:`Detection` (or :class:`BBox`) objects, sorted by score descending with ties
        broken by ascending source index.
    :param list gt_boxes: Ground-truth :class:`BBox` objects.
    :param list ignore_boxes: Ignore regions.
    :param float iou_threshold: The matching threshold.
    :return: **outcome**: A :class:`MatchOutcome`.
    """
    n_gt = len(gt_boxes)
    gt_matched = np.zeros(n_gt, dtype=bool)
    if len(detections) == 0:
        return MatchOutcome([], gt_matched, [])
    boxes = _as_boxes(detections)
    overlaps = iou_matrix(boxes, boxes_to_array(list(gt_boxes))) if n_gt else np.zeros((len(boxes), 0))
    if len(ignore_boxes):
        covered = iof_matrix(boxes, boxes_to_array(list(ignore_boxes))).max(axis=1) >= iou_threshold
    else:
        covered = np.zeros(len(boxes), dtype=bool)
    flags, assignments = [], []
    for i in range(len(boxes)):
        g = -1
        if n_gt:
            available = np.where(gt_matched, -1.0, overlaps[i])
            best = int(np.argmax(available))
            if available[best] >= iou_threshold:
                g = best
        if g >= 0:
            gt_matched[g] = True
            flags.append(TP)
        elif covered[i]:
            flags.append(IGNORED)
        else:
            flags.append(FP)
        assignments.append(g)
    return MatchOutcome(flags, gt_matched, assignments)

class PRCurve(object):
    """
    Precision/recall and FPPI/miss-rate points accumulated over a dataset at each successive detection of the
    global ranking, ignored detections excluded.

    :param numpy.ndarray scores: Score of the detection at each rank.
    :param numpy.ndarray hits: ``True`` where that detection is a true positive.
    :param numpy.ndarray ranks: Zero-based rank of that detection within its own image.
    :param int num_gt: Total number of ground-truth boxes.
    :param int num_images: Number of images.
    :param int k: Per-image cap the detections were truncated to before matching, or ``None``.
    """
    def __init__(self, scores, hits, ranks, num_gt, num_images, k=None):
        self.scores = np.asarray(scores, dtype=float)
        self.hits = np.asarray(hits, dtype=bool)
        self.ranks = np.asarray(ranks, dtype=int)
        self.num_gt = int(num_gt)
        self.num_images = int(num_images)
        self.k = k
        self.tp = np.cumsum(self.hits)
        self.fp = np.cumsum(~self.hits)
    def __len__(self):
        return len(self.scores)
    @property
    def recall(self):
        if self.num_gt == 0:
            return np.zeros(len(self))
        return self.tp / self.num_gt
    @property
    def precision(self):
        return self.tp / np.arange(1, len(self) + 1)
    @property
    def fppi(self):
        if self.num_images == 0:
            return np.zeros(len(self))
        return self.fp / self.num_images
    @property
    def missrate(self):
        return 1.0 - self.recall

def average_precision(curve):
    """
    All-points interpolated average precision: the sum over recall increments of the increment times the best
    precision reached at that recall or beyond.

    :param PRCurve curve: The dataset curve.
    :return: **ap**: A float in [0, 1]; 0 without ground truth or detections.
    """
    if curve.num_gt == 0 or len(curve) == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    # Recall only grows at true positives, by 1 / num_gt each.
    return float(np.sum(envelope[curve.hits])) / curve.num_gt

def recall_at_k(curve, k=100):
    """
    Fraction of ground-truth boxes matched when every image keeps its ``k`` best detections. Greedy matching
    of a prefix does not depend on what follows it, so any ``k`` up to the curve's own cap is answered exactly.

    :param PRCurve curve: The dataset curve.
    :param int k: Detections kept per image.
    :return: **recall**: A float in [0, 1]; 1.0 without ground truth.
    """
    if k is not None and k <= 0:
        raise ValueError('recall_at_k: k must be positive, got %r.' % (k,))
    if curve.k is not None and (k is None or k > curve.k):
        raise ValueError('recall_at_k: the curve was truncated at %d detections per image, cannot answer k=%r.' % (curve.k, k))
    if curve.num_gt == 0:
        return 1.0
    hits = curve.hits if k is None else curve.hits & (curve.ranks < k)
    return float(np.count_nonzero(hits)) / curve.num_gt

def log_average_miss_rate(curve, references=FPPI_REFERENCES):
    """
    Log-average miss rate over FPPI references in [10^-2, 10^0]. At each reference the miss rate is read at the
    largest achieved FPPI not above it, or taken as 1.0 when the curve starts above it. Miss rates are floored
    at 1e-10 before their geometric mean.

    :param PRCurve curve: The dataset curve.
    :param tuple references: FPPI reference points.
    :return: **mr2**: A float in [0, 1]; 1.0 for an empty curve.
    """
    if len(curve) == 0 or curve.num_gt == 0:
        return 1.0
    fppi, recall = curve.fppi, curve.recall
    rates = []
    for reference in references:
        reachable = fppi <= reference
        rates.append(1.0 - recall[reachable].max() if reachable.any() else 1.0)
    rates = np.maximum(np.array(rates), MISS_RATE_FLOOR)
    return float(np.exp(np.mean(np.log(rates))))

def rank_detections(detections):
    """
    Sorts detections by score descending, ties broken by ascending source index.
    """
    return sorted(detections, key=lambda d: (-d.score, d.source_index))

class MetricReport(object):
    """
    AP, Recall@k and MR^-2 of a dataset, with the underlying curve, counts and diagnostic flags.
    """
    def __init__(self, ap, recall, k, mr2, curve, counts, flags=(), iou_threshold=0.5):
        self.ap = ap
        self.recall = recall
        self.k = k
        self.mr2 = mr2
        self.curve = curve
        self.counts = dict(counts)
        self.flags = list(flags)
        self.iou_threshold = iou_threshold
    def to_dict(self):
        return {'ap': self.ap, 'recall': self.recall, 'mr2': self.mr2}
    def to_text(self):
        """
        Renders the metrics at 4 decimals, the counts, any flags and the conventions block.
        """
        k = 'all' if self.k is None else str(self.k)
        lines = ['AP: %.4f' % self.ap,
                 'Recall@%s: %.4f' % (k, self.recall),
                 'MR-2: %.4f' % self.mr2]
        for name in ('images', 'gt', 'detections', 'tp', 'fp', 'ignored'):
            lines.append('%s: %d' % (name, self.counts.get(name, 0)))
        if self.flags:
            lines.append('flags: %s' % ','.join(self.flags))
        lines.append('')
        lines.append('conventions:')
        lines.append('  iou_threshold: %g' % self.iou_threshold)
        for name, text in CONVENTIONS:
            lines.append('  %s: %s' % (name, text))
        return '\n'.join(lines) + '\n'
    def curve_frame(self):
        """
        The PR/FPPI curve as a pandas.DataFrame with columns ``rank, score, recall, precision, fppi, missrate``;
        ``rank`` is the 1-based position in the global ranking.
        """
        curve = self.curve
        return pd.DataFrame({'rank': np.arange(1, len(curve) + 1), 'score': curve.scores, 'recall': curve.recall,
                             'precision': curve.precision, 'fppi': curve.fppi, 'missrate': curve.missrate},
                            columns=['rank', 'score', 'recall', 'precision', 'fppi', 'missrate'])
    def __repr__(self):
        return 'MetricReport(ap=%.4f, recall=%.4f, mr2=%.4f)' % (self.ap, self.recall, self.mr2)

def evaluate(scenes, detections_by_image, k=100, iou_threshold=0.5):
    """
    Evaluates detections against a set of scenes. Every image keeps its top ``k`` detections, which are matched
    against its ground truth; the per-image outcomes are merged into one ranking ordered by score descending,
    then image order, then in-image rank.

    :param list scenes: :class:`GroundTruthScene` objects; defines the image set and its order.
    :param dict detections_by_image: Maps image ids to lists of :class:`Detection`. Missing images have none.
    :param int k: Per-image cap; ``None`` keeps everything.
    :param float iou_threshold: Matching threshold.
    :return: **report**: A :class:`MetricReport`.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError('evaluate: iou_threshold must lie in (0, 1], got %r.' % (iou_threshold,))
    if k is not None and (int(k) != k or k <= 0):
        raise ValueError('evaluate: k must be a positive integer or None, got %r.' % (k,))
    known = set(scene.image_id for scene in scenes)
    for image_id in detections_by_image:
        if image_id not in known:
            raise ValueError('evaluate: detections reference unknown image_id %r.' % (image_id,))
    entries = []
    counts = {'images': len(scenes), 'gt': 0, 'detections': 0, 'tp': 0, 'fp': 0, 'ignored': 0}
    for order, scene in enumerate(scenes):
        ranked = rank_detections(detections_by_image.get(scene.image_id, []))
        if k is not None:
            ranked = ranked[:k]
        outcome = match_image(ranked, scene.gt_boxes, scene.ignore_boxes, iou_threshold)
        counts['gt'] += len(scene.gt_boxes)
        counts['detections'] += len(ranked)
        counts['tp'] += outcome.tp
        counts['fp'] += outcome.fp
        counts['ignored'] += outcome.ignored
        for rank, (d, flag) in enumerate(zip(ranked, outcome.flags)):
            if flag != IGNORED:
                entries.append((-d.score, order, rank, flag == TP))
        logger.debug('%s: %d tp, %d fp, %d ignored of %d gt.', scene.image_id, outcome.tp, outcome.fp,
                     outcome.ignored, len(scene.gt_boxes))
    entries.sort()
    curve = PRCurve([-e[0] for e in entries], [e[3] for e in entries], [e[2] for e in entries],
                    counts['gt'], counts['images'], k)
    flags = []
    if counts['gt'] == 0:
        flags.append(NO_GROUND_TRUTH)
        logger.warning('evaluate: no ground-truth boxes; reporting AP 0, Recall 1 and MR-2 1.')
    report = MetricReport(average_precision(curve), recall_at_k(curve, k), k, log_average_miss_rate(curve),
                          curve, counts, flags, iou_threshold)
    logger.info('evaluated %d images: AP %.4f, Recall@%s %.4f, MR-2 %.4f.', counts['images'], report.ap,
                'all' if k is None else k, report.recall, report.mr2)
    return report
