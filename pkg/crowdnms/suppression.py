"""Non-maximum suppression with pluggable re-scoring functions."""
import itertools
import logging
import math
import numpy as np
import pandas as pd
from scipy.spatial import cKDTree
from crowdnms.geometry import BBox, RelCoeffs, iou, encode_relative, decode_relative, gaussian_likelihood

logger = logging.getLogger(__name__)

METHODS = ('greedy', 'soft-linear', 'soft-gaussian', 'adaptive', 'noh')
FALLBACKS = ('greedy', 'soft-linear', 'soft-gaussian')

_ALIASES = {
    'greedy': 'greedy', 'greedy-nms': 'greedy', 'nms': 'greedy',
    'soft-linear': 'soft-linear', 'linear': 'soft-linear', 'soft-nms-linear': 'soft-linear',
    'soft-gaussian': 'soft-gaussian', 'gaussian': 'soft-gaussian', 'soft-nms-gaussian': 'soft-gaussian',
    'adaptive': 'adaptive', 'adaptive-nms': 'adaptive',
    'noh': 'noh', 'noh-nms': 'noh',
}

def canonical_method(name):
    """
    Maps a user supplied method name onto one of :data:`METHODS`. Matching ignores case and treats
    ``_`` like ``-``.

    :param str name: The method name.
    :return: **method**: The canonical method name.
    """
    key = str(name).strip().lower().replace('_', '-')
    if key not in _ALIASES:
        raise ValueError('SuppressionConfig: unknown method %r. Choose from greedy, soft-linear, soft-gaussian, adaptive or noh.' % (name,))
    return _ALIASES[key]

class Detection(object):
    """
    A scored box, optionally carrying the hallucination side-channel.

    :param BBox box: The detection box.
    :param float score: Confidence in [0, 1].
    :param float density: Optional predicted density in [0, 1]: the IoU between this detection's object
        and the object overlapping it the most.
    :param RelCoeffs noh_mean: Optional hallucinated nearby-object coefficients, relative to ``box``.
        Only allowed alongside ``density``.
    :param int source_index: Position of the detection in its input list; used to break score ties.
    :param int gt_index: Index of the ground-truth box that spawned a synthetic proposal. Diagnostic
        only; evaluation never reads it.
    """
    __slots__ = ('box', 'score', 'density', 'noh_mean', 'source_index', 'gt_index')
    def __init__(self, box, score, density=None, noh_mean=None, source_index=0, gt_index=None):
        if not isinstance(box, BBox):
            box = BBox(*box)
        score = float(score)
        if not 0.0 <= score <= 1.0:
            raise ValueError('Detection: score must lie in [0, 1], got %r.' % score)
        if density is not None:
            density = float(density)
            if not 0.0 <= density <= 1.0:
                raise ValueError('Detection: density must lie in [0, 1], got %r.' % density)
        if noh_mean is not None:
            if density is None:
                raise ValueError('Detection: noh_mean requires a density.')
            if len(noh_mean) != 4:
                raise ValueError('Detection: noh_mean must have 4 coefficients, got %d.' % len(noh_mean))
            noh_mean = RelCoeffs(*[float(v) for v in noh_mean])
            if not all(math.isfinite(v) for v in noh_mean):
                raise ValueError('Detection: noh_mean must be finite, got %r.' % (tuple(noh_mean),))
        source_index = int(source_index)
        if source_index < 0:
            raise ValueError('Detection: source_index must be non-negative, got %d.' % source_index)
        self.box = box
        self.score = score
        self.density = density
        self.noh_mean = noh_mean
        self.source_index = source_index
        self.gt_index = gt_index
    def replace(self, **changes):
        """
        Returns a copy with some fields replaced.
        """
        fields = {name: getattr(self, name) for name in self.__slots__}
        fields.update(changes)
        return Detection(**fields)
    def __eq__(self, other):
        if not isinstance(other, Detection):
            return NotImplemented
        return all(getattr(self, name) == getattr(other, name) for name in self.__slots__)
    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result
    __hash__ = None
    def __repr__(self):
        return 'Detection(%r, score=%r, density=%r, noh_mean=%r, source_index=%d)' % (
            self.box, self.score, self.density, None if self.noh_mean is None else tuple(self.noh_mean), self.source_index)

class SuppressionConfig(object):
    """
    The suppression strategy and its hyper-parameters. Below are details of its constructor.

    :param str method: One of ``greedy``, ``soft-linear``, ``soft-gaussian``, ``adaptive`` or ``noh``.
    :param float nms_threshold: The IoU threshold N_t in (0, 1). Re-scoring only applies to neighbors whose
        IoU with the selected box is at least N_t.
    :param float soft_sigma: The ``sigma`` of the Gaussian Soft-NMS decay ``exp(-iou^2 / sigma)``.
    :param float noh_sigma: The spread of the nearby-object Gaussian (NOH only).
    :param float density_threshold: d_t in [0, 1]; below it NOH falls back to ``fallback`` (NOH only).
    :param str fallback: ``greedy``, ``soft-linear`` or ``soft-gaussian`` (NOH only).
    :param float score_floor: Detections whose final score is at or below the floor are dropped.
    :param int max_detections: Maximum number of detections kept; ``None`` keeps everything.
    :param callable likelihood: Optional replacement for the nearby-object Gaussian, called as
        ``likelihood(best, other, overlap)`` and returning a multiplier in [0, 1]. See :func:`step_likelihood`.
    :param bool verbose: When ``True``, suppression summaries are logged at INFO instead of DEBUG.

    **Sample constructor initialisations**::

        from crowdnms import SuppressionConfig

        config = SuppressionConfig(method='noh', nms_threshold=0.5, noh_sigma=0.2, density_threshold=0.3)
        soft = config.replace(method='soft-linear')
    """
    def __init__(self, method='greedy', nms_threshold=0.5, soft_sigma=0.5, noh_sigma=0.2, density_threshold=0.3,
                 fallback='greedy', score_floor=0.0, max_detections=100, likelihood=None, verbose=False):
        self.method = canonical_method(method)
        self.fallback = canonical_method(fallback)
        if self.fallback not in FALLBACKS:
            raise ValueError('SuppressionConfig: the NOH fallback must be greedy, soft-linear or soft-gaussian, got %r.' % (fallback,))
        self.nms_threshold = float(nms_threshold)
        self.soft_sigma = float(soft_sigma)
        self.noh_sigma = float(noh_sigma)
        self.density_threshold = float(density_threshold)
        self.score_floor = float(score_floor)
        if not 0.0 < self.nms_threshold < 1.0:
            raise ValueError('SuppressionConfig: nms_threshold must lie in (0, 1), got %r.' % (nms_threshold,))
        if not self.soft_sigma > 0:
            raise ValueError('SuppressionConfig: soft_sigma must be positive, got %r.' % (soft_sigma,))
        if not self.noh_sigma > 0:
            raise ValueError('SuppressionConfig: noh_sigma must be positive, got %r.' % (noh_sigma,))
        if not 0.0 <= self.density_threshold <= 1.0:
            raise ValueError('SuppressionConfig: density_threshold must lie in [0, 1], got %r.' % (density_threshold,))
        if not 0.0 <= self.score_floor < 1.0:
            raise ValueError('SuppressionConfig: score_floor must lie in [0, 1), got %r.' % (score_floor,))
        if max_detections is not None:
            if int(max_detections) != max_detections or max_detections <= 0:
                raise ValueError('SuppressionConfig: max_detections must be a positive integer or None, got %r.' % (max_detections,))
            max_detections = int(max_detections)
        self.max_detections = max_detections
        if likelihood is not None and not callable(likelihood):
            raise ValueError('SuppressionConfig: likelihood must be callable.')
        self.likelihood = likelihood
        self.verbose = verbose
    def replace(self, **changes):
        """
        Returns a validated copy with some fields replaced.

        :param SuppressionConfig self:
            An instance of the SuppressionConfig object.
        """
        fields = dict(method=self.method, nms_threshold=self.nms_threshold, soft_sigma=self.soft_sigma,
                      noh_sigma=self.noh_sigma, density_threshold=self.density_threshold, fallback=self.fallback,
                      score_floor=self.score_floor, max_detections=self.max_detections,
                      likelihood=self.likelihood, verbose=self.verbose)
        fields.update(changes)
        return SuppressionConfig(**fields)
    def __repr__(self):
        return ('SuppressionConfig(method=%r, nms_threshold=%r, soft_sigma=%r, noh_sigma=%r, density_threshold=%r, '
                'fallback=%r, score_floor=%r, max_detections=%r)' % (
                    self.method, self.nms_threshold, self.soft_sigma, self.noh_sigma, self.density_threshold,
                    self.fallback, self.score_floor, self.max_detections))

def step_likelihood(best, other, overlap):
    """
    The step function of Adaptive-NMS used as a nearby-object likelihood: 1 while the overlap stays below
    the selected box's density, 0 otherwise. Substituting it for the Gaussian turns NOH into Adaptive-NMS.
    """
    return 1.0 if overlap < best.density else 0.0

# Base Rescorer class
#####################
class Rescorer(object):
    """
    Returns the replacement score of a neighbor ``other`` that overlaps the selected box ``best`` by at least N_t.

    :param str method: The re-scoring rule.
    :param SuppressionConfig config: The configuration it reads its hyper-parameters from.
    """
    def __init__(self, method, config):
        self.method = method
        self.config = config
    @staticmethod
    def select_rescorer(config, method=None):
        """
        Method to return a rescorer subclass.

        :param SuppressionConfig config: The suppression configuration.
        :param str method: Overrides ``config.method`` (used for the NOH fallback).
        """
        method = config.method if method is None else canonical_method(method)
        if method == 'greedy':
            return greedy(config)
        elif method == 'soft-linear':
            return soft_linear(config)
        elif method == 'soft-gaussian':
            return soft_gaussian(config)
        elif method == 'adaptive':
            return adaptive(config)
        elif method == 'noh':
            return noh(config)
        else:
            raise ValueError('Rescorer: no re-scoring rule for method %r.' % (method,))
    def check(self, detections):
        """
        Verifies the detections carry the fields this rule reads; raises ``ValueError`` naming the first offender.
        """
        pass
    def rescore(self, best, other, score, overlap):
        raise NotImplementedError('Rescorer: rescore() is implemented by the subclasses.')

class greedy(Rescorer):
    """
    Greedy-NMS: overlapping neighbors are eliminated.
    """
    def __init__(self, config):
        super().__init__('greedy', config)
    def rescore(self, best, other, score, overlap):
        return 0.0

class soft_linear(Rescorer):
    """
    Linear Soft-NMS: ``s * (1 - iou)``.
    """
    def __init__(self, config):
        super().__init__('soft-linear', config)
    def rescore(self, best, other, score, overlap):
        return score * (1.0 - overlap)

class soft_gaussian(Rescorer):
    """
    Gaussian Soft-NMS: ``s * exp(-iou^2 / sigma)``.
    """
    def __init__(self, config):
        super().__init__('soft-gaussian', config)
        self.sigma = config.soft_sigma
    def rescore(self, best, other, score, overlap):
        return score * math.exp(-(overlap * overlap) / self.sigma)

class adaptive(Rescorer):
    """
    Adaptive-NMS written as a gated step function: the neighbor survives while its overlap stays below the
    selected box's density. Equivalent to thresholding at ``max(N_t, density)``.
    """
    def __init__(self, config):
        super().__init__('adaptive', config)
    def check(self, detections):
        for d in detections:
            if d.density is None:
                raise ValueError('adaptive: detection %d has no density.' % d.source_index)
    def rescore(self, best, other, score, overlap):
        return score if overlap < best.density else 0.0

class noh(Rescorer):
    """
    NOH-NMS: when the selected box predicts enough nearby-object cues (density at least d_t), the neighbor's
    score is multiplied by the likelihood of it being the hallucinated nearby object; otherwise the fallback
    rule applies.
    """
    def __init__(self, config):
        super().__init__('noh', config)
        self.sigma = config.noh_sigma
        self.density_threshold = config.density_threshold
        self.likelihood = config.likelihood
        self.fallback = Rescorer.select_rescorer(config, config.fallback)
    def check(self, detections):
        for d in detections:
            if d.density is None:
                raise ValueError('noh: detection %d has no density.' % d.source_index)
            if d.density >= self.density_threshold and d.noh_mean is None:
                raise ValueError('noh: detection %d has density %r >= d_t but no noh_mean.' % (d.source_index, d.density))
    def rescore(self, best, other, score, overlap):
        if best.density < self.density_threshold:
            return self.fallback.rescore(best, other, score, overlap)
        if self.likelihood is not None:
            return score * self.likelihood(best, other, overlap)
        return score * gaussian_likelihood(encode_relative(other.box, best.box), best.noh_mean, self.sigma)

def rescore(best, other, config, score=None, overlap=None):
    """
    Re-scores a neighbor of the selected detection. Callers apply it only when ``overlap >= N_t``.

    :param Detection best: The selected detection M.
    :param Detection other: The neighbor b_i.
    :param SuppressionConfig config: The suppression configuration.
    :param float score: The neighbor's current score; defaults to ``other.score``.
    :param float overlap: ``iou(best.box, other.box)``; computed when omitted.
    :return: **score**: The replacement score.
    """
    rescorer = Rescorer.select_rescorer(config)
    rescorer.check([best])
    if score is None:
        score = other.score
    if overlap is None:
        overlap = iou(best.box, other.box)
    return rescorer.rescore(best, other, score, overlap)

class SuppressionResult(object):
    """
    The kept detections as ``(source_index, final_score)`` pairs, ordered by descending final score with
    ties broken by ascending source index.
    """
    def __init__(self, kept):
        self.kept = [(int(i), float(s)) for i, s in kept]
    @property
    def source_indices(self):
        return [i for i, _ in self.kept]
    @property
    def scores(self):
        return [s for _, s in self.kept]
    def apply(self, detections):
        """
        Materializes the kept detections with their final scores, in result order.

        :param list detections: The list that was suppressed.
        :return: **detections**: A list of :class:`Detection`.
        """
        by_source = {d.source_index: d for d in detections}
        return [by_source[i].replace(score=s) for i, s in self.kept]
    def __len__(self):
        return len(self.kept)
    def __iter__(self):
        return iter(self.kept)
    def __eq__(self, other):
        if not isinstance(other, SuppressionResult):
            return NotImplemented
        return self.kept == other.kept
    def __repr__(self):
        return 'SuppressionResult(%r)' % (self.kept,)

def _check_sources(detections):
    seen = set()
    for d in detections:
        if d.source_index in seen:
            raise ValueError('suppress: duplicate source_index %d.' % d.source_index)
        seen.add(d.source_index)

def _finalize(kept, config):
    kept = [(i, s) for i, s in kept if s > config.score_floor]
    kept.sort(key=lambda item: (-item[1], item[0]))
    if config.max_detections is not None:
        kept = kept[:config.max_detections]
    return SuppressionResult(kept)

_SIZE_NEIGHBORS = ((0, 0), (0, 1), (1, -1), (1, 0), (1, 1))

def _candidate_pairs(w, h, cx, cy, nms_threshold):
    """
    Unordered pairs (i, j) that may reach ``iou >= nms_threshold``. Such a pair has width and height ratios
    within ``[t, 1/t]`` and center offsets of at most ``(1 - t)`` times the larger width and height. Boxes are
    grouped by log width and log height in bins of ``log(1/t)``, so partners share a bin or sit in adjacent
    ones; each pair of adjacent groups is searched with its own scaled Chebyshev radius.
    """
    t = nms_threshold
    bin_width = math.log(1.0 / t) * (1.0 + 1e-6) + 1e-12
    keys = np.column_stack((np.floor(np.log(w) / bin_width), np.floor(np.log(h) / bin_width))).astype(np.int64)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    order = np.argsort(inverse, kind='stable')
    bounds = np.searchsorted(inverse[order], np.arange(len(unique) + 1))
    groups = {tuple(key): order[bounds[g]:bounds[g + 1]] for g, key in enumerate(unique.tolist())}
    radius = (1.0 - t) * (1.0 + 1e-6) + 1e-9
    firsts, seconds = [], []
    for key, a in groups.items():
        for dw, dh in _SIZE_NEIGHBORS:
            b = groups.get((key[0] + dw, key[1] + dh))
            if b is None:
                continue
            sx = max(w[a].max(), w[b].max())
            sy = max(h[a].max(), h[b].max())
            tree_a = cKDTree(np.column_stack((cx[a] / sx, cy[a] / sy)))
            if dw == 0 and dh == 0:
                pairs = np.asarray(tree_a.query_pairs(radius, p=np.inf, output_type='ndarray')).reshape(-1, 2).astype(np.intp)
                firsts.append(a[pairs[:, 0]])
                seconds.append(a[pairs[:, 1]])
                continue
            tree_b = cKDTree(np.column_stack((cx[b] / sx, cy[b] / sy)))
            found = tree_a.query_ball_tree(tree_b, radius, p=np.inf)
            lengths = np.fromiter(map(len, found), dtype=np.intp, count=len(found))
            firsts.append(np.repeat(a, lengths))
            seconds.append(b[np.fromiter(itertools.chain.from_iterable(found), dtype=np.intp,
                                         count=int(lengths.sum()))])
    if not firsts:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    return np.concatenate(firsts).astype(np.intp), np.concatenate(seconds).astype(np.intp)

def _overlapping_pairs(x1, y1, x2, y2, areas, nms_threshold):
    """
    All ordered pairs (i, j), i != j, with ``iou >= nms_threshold``, grouped by i.
    """
    n = len(x1)
    w = x2 - x1
    h = y2 - y1
    first, second = _candidate_pairs(w, h, x1 + 0.5 * w, y1 + 0.5 * h, nms_threshold)
    rows = np.concatenate((first, second))
    cols = np.concatenate((second, first))
    # Same operations, in the same order, as geometry.iou.
    iw = np.minimum(x2[rows], x2[cols]) - np.maximum(x1[rows], x1[cols])
    ih = np.minimum(y2[rows], y2[cols]) - np.maximum(y1[rows], y1[cols])
    touching = (iw > 0) & (ih > 0)
    rows, cols, iw, ih = rows[touching], cols[touching], iw[touching], ih[touching]
    inter = iw * ih
    overlaps = inter / (areas[rows] + areas[cols] - inter)
    selected = overlaps >= nms_threshold
    rows, cols, overlaps = rows[selected], cols[selected], overlaps[selected]
    order = np.argsort(rows, kind='stable')
    rows, cols, overlaps = rows[order], cols[order], overlaps[order]
    pointers = np.searchsorted(rows, np.arange(n + 1))
    return pointers, cols.tolist(), overlaps.tolist()

def suppress(detections, config):
    """
    Greedy selection loop with a pluggable re-scoring step. Repeatedly selects the remaining detection with
    the highest current score (ties to the lowest source index), keeps it with that score, and re-scores
    every remaining detection overlapping it by at least N_t. Detections at or below ``score_floor`` are
    dropped, the rest are sorted by (score desc, source_index asc) and truncated to ``max_detections``.

    :param list detections: A list of :class:`Detection` with unique source indices; may be empty.
    :param SuppressionConfig config: The suppression configuration.
    :return: **result**: A :class:`SuppressionResult`.
    """
    rescorer = Rescorer.select_rescorer(config)
    if len(detections) == 0:
        return SuppressionResult([])
    rescorer.check(detections)
    _check_sources(detections)
    floor = config.score_floor
    dets = sorted(detections, key=lambda d: d.source_index)
    n = len(dets)
    boxes = np.array([[d.box.x, d.box.y, d.box.w, d.box.h] for d in dets], dtype=float)
    x1, y1 = boxes[:, 0], boxes[:, 1]
    x2, y2 = x1 + boxes[:, 2], y1 + boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    pointers, neighbors, overlaps = _overlapping_pairs(x1, y1, x2, y2, areas, config.nms_threshold)
    current = np.array([d.score for d in dets], dtype=float)
    current[current <= floor] = -np.inf
    kept = []
    rescored = 0
    while True:
        m = int(np.argmax(current))
        best_score = float(current[m])
        # Scores never increase, so nothing left can end above the floor.
        if best_score <= floor:
            break
        current[m] = -np.inf
        best = dets[m]
        kept.append((best.source_index, best_score))
        for k in range(pointers[m], pointers[m + 1]):
            j = neighbors[k]
            score = float(current[j])
            if score == -np.inf:
                continue
            score = rescorer.rescore(best, dets[j], score, overlaps[k])
            current[j] = score if score > floor else -np.inf
            rescored += 1
    result = _finalize(kept, config)
    logger.log(logging.INFO if config.verbose else logging.DEBUG,
               '%s: %d detections in, %d selected, %d re-scored, %d kept.', config.method, n, len(kept), rescored, len(result))
    return result

def suppress_reference(detections, config):
    """
    Straightforward O(N^2) rendition of the same selection loop, without candidate search, early exit or
    pruning. Used as a test oracle for :func:`suppress`; same contract.

    :param list detections: A list of :class:`Detection`.
    :param SuppressionConfig config: The suppression configuration.
    :return: **result**: A :class:`SuppressionResult`.
    """
    rescorer = Rescorer.select_rescorer(config)
    if len(detections) == 0:
        return SuppressionResult([])
    rescorer.check(detections)
    _check_sources(detections)
    remaining = [[d, d.score] for d in detections]
    kept = []
    while remaining:
        chosen = 0
        for i in range(1, len(remaining)):
            d, s = remaining[i]
            c, cs = remaining[chosen]
            if s > cs or (s == cs and d.source_index < c.source_index):
                chosen = i
        best, best_score = remaining.pop(chosen)
        kept.append((best.source_index, best_score))
        for entry in remaining:
            overlap = iou(best.box, entry[0].box)
            if overlap >= config.nms_threshold:
                entry[1] = rescorer.rescore(best, entry[0], entry[1], overlap)
    return _finalize(kept, config)

def suppression_field(config, methods=None, resolution=41, extent=1.0, density=0.5, mean=(0.25, 0.0, 0.0, 0.0),
                      reference=None):
    """
    The suppression degree a selected box imposes on a unit-score neighbor, over a grid of relative center
    offsets. The neighbor's shape is fixed to the hallucinated mean's width and height coefficients.

    :param SuppressionConfig config: Supplies N_t and the per-method hyper-parameters.
    :param list methods: Methods to evaluate; defaults to all of :data:`METHODS`.
    :param int resolution: Number of grid points per axis.
    :param float extent: The grid spans ``[-extent, extent]`` in both relative offsets.
    :param float density: Density of the selected box (Adaptive and NOH).
    :param tuple mean: Hallucinated coefficients ``(dx, dy, dw, dh)`` of the selected box (NOH).
    :param BBox reference: The selected box; defaults to a 41 x 100 pedestrian box.
    :return: **field**: A pandas.DataFrame with columns ``method, dx, dy, multiplier``.
    """
    if int(resolution) < 1:
        raise ValueError('suppression_field: resolution must be a positive integer, got %r.' % (resolution,))
    if not extent > 0:
        raise ValueError('suppression_field: extent must be positive, got %r.' % (extent,))
    methods = list(METHODS) if methods is None else [canonical_method(m) for m in methods]
    reference = BBox(0.0, 0.0, 41.0, 100.0) if reference is None else reference
    mean = RelCoeffs(*[float(v) for v in mean])
    best = Detection(reference, 1.0, density=density, noh_mean=mean)
    offsets = np.linspace(-extent, extent, int(resolution))
    rows = []
    for method in methods:
        method_config = config.replace(method=method)
        rescorer = Rescorer.select_rescorer(method_config)
        rescorer.check([best])
        for dy in offsets:
            for dx in offsets:
                other = Detection(decode_relative((dx, dy, mean.dw, mean.dh), reference), 1.0)
                overlap = iou(best.box, other.box)
                if overlap < method_config.nms_threshold:
                    multiplier = 1.0
                else:
                    multiplier = rescorer.rescore(best, other, 1.0, overlap)
                rows.append((method, float(dx), float(dy), multiplier))
    return pd.DataFrame(rows, columns=['method', 'dx', 'dy', 'multiplier'])
