"""Axis-aligned box arithmetic and the nearby-object likelihood."""
from collections import namedtuple
import math
import numpy as np

class BBox(object):
    """
    An axis-aligned rectangle in pixel units. Below are details of its constructor.

    :param float x: Left edge.
    :param float y: Top edge.
    :param float w: Width, strictly positive.
    :param float h: Height, strictly positive.

    Boxes may lie partly or wholly off-image; clipping is the caller's concern. Degenerate boxes are
    rejected here so that every downstream formula is total.

    **Sample constructor initialisations**::

        from crowdnms import BBox

        box = BBox(10., 20., 41., 100.)
        box.cx, box.cy
    """
    __slots__ = ('x', 'y', 'w', 'h')
    def __init__(self, x, y, w, h):
        x, y, w, h = float(x), float(y), float(w), float(h)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(w) and math.isfinite(h)):
            raise ValueError('BBox: all fields must be finite, got (%r, %r, %r, %r).' % (x, y, w, h))
        if w <= 0 or h <= 0:
            raise ValueError('BBox: width and height must be positive, got w=%r, h=%r.' % (w, h))
        self.x = x
        self.y = y
        self.w = w
        self.h = h
    @property
    def cx(self):
        return self.x + 0.5 * self.w
    @property
    def cy(self):
        return self.y + 0.5 * self.h
    @property
    def x2(self):
        return self.x + self.w
    @property
    def y2(self):
        return self.y + self.h
    def to_list(self):
        """
        Returns the box as ``[x, y, w, h]``, the serialization order used by every file format.
        """
        return [self.x, self.y, self.w, self.h]
    def __eq__(self, other):
        if not isinstance(other, BBox):
            return NotImplemented
        return self.x == other.x and self.y == other.y and self.w == other.w and self.h == other.h
    def __ne__(self, other):
        result = self.__eq__(other)
        if result is NotImplemented:
            return result
        return not result
    def __hash__(self):
        return hash((self.x, self.y, self.w, self.h))
    def __repr__(self):
        return 'BBox(%r, %r, %r, %r)' % (self.x, self.y, self.w, self.h)

RelCoeffs = namedtuple('RelCoeffs', ['dx', 'dy', 'dw', 'dh'])
RelCoeffs.__doc__ = """
    Relative box coefficients of a target against a reference box: the center offset divided by the
    reference size, and the log ratio of the sizes.
    """

def area(b):
    """
    Computes the area of a box.

    :param BBox b: The box.
    :return: **area**: ``w * h``.
    """
    return b.w * b.h

def _extent_overlap(a, b):
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if iw <= 0:
        return 0.0
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ih <= 0:
        return 0.0
    return iw * ih

def _extent_area(b):
    # Same corner arithmetic as the intersection, so iou(a, a) is exactly 1.
    return ((b.x + b.w) - b.x) * ((b.y + b.h) - b.y)

def iou(a, b):
    """
    Intersection over union of two boxes.

    :param BBox a: First box.
    :param BBox b: Second box.
    :return: **iou**: A float in [0, 1]; 0 for disjoint boxes. Symmetric in its arguments.
    """
    inter = _extent_overlap(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (_extent_area(a) + _extent_area(b) - inter)

def iof(a, b):
    """
    Intersection over foreground: the intersection divided by the area of the first box. Used to
    match detections against ignore regions.

    :param BBox a: The foreground box (typically a detection).
    :param BBox b: The covering box (typically an ignore region).
    :return: **iof**: A float in [0, 1]. Not symmetric.
    """
    inter = _extent_overlap(a, b)
    if inter == 0.0:
        return 0.0
    return inter / _extent_area(a)

def encode_relative(target, reference):
    """
    Encodes ``target`` relative to ``reference``: center offsets divided by the reference width and
    height, followed by the log ratios of the widths and heights. Centers are ``x + w/2`` and ``y + h/2``.

    :param BBox target: The box being described.
    :param BBox reference: The box it is described against.
    :return: **coeffs**: A :class:`RelCoeffs`.
    """
    return RelCoeffs((target.cx - reference.cx) / reference.w,
                     (target.cy - reference.cy) / reference.h,
                     math.log(target.w / reference.w),
                     math.log(target.h / reference.h))

def decode_relative(coeffs, reference):
    """
    Inverse of :func:`encode_relative`. Zero coefficients return a box equal to ``reference``.

    :param RelCoeffs coeffs: Relative coefficients (any 4-sequence ``dx, dy, dw, dh``).
    :param BBox reference: The reference box.
    :return: **box**: The decoded :class:`BBox`.
    """
    dx, dy, dw, dh = coeffs
    w = reference.w * math.exp(dw)
    h = reference.h * math.exp(dh)
    x = reference.x + dx * reference.w + 0.5 * (reference.w - w)
    y = reference.y + dy * reference.h + 0.5 * (reference.h - h)
    return BBox(x, y, w, h)

def gaussian_likelihood(rel, mean, sigma):
    """
    Isotropic Gaussian likelihood of relative coefficients around a hallucinated mean,
    ``exp(-||rel - mean||^2 / (2 sigma^2))``. One scalar ``sigma`` is shared by all four coefficients.

    :param RelCoeffs rel: Coefficients of a neighbor relative to the selected box.
    :param RelCoeffs mean: The hallucinated nearby-object coefficients.
    :param float sigma: Spread, strictly positive.
    :return: **likelihood**: A float in (0, 1]; exactly 1 when ``rel == mean``.
    """
    if not sigma > 0:
        raise ValueError('gaussian_likelihood: sigma must be positive, got %r.' % (sigma,))
    d0 = rel[0] - mean[0]
    d1 = rel[1] - mean[1]
    d2 = rel[2] - mean[2]
    d3 = rel[3] - mean[3]
    distance = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
    return math.exp(-distance / (2.0 * sigma * sigma))

def boxes_to_array(boxes):
    """
    Stacks boxes into an array.

    :param list boxes: A list of :class:`BBox`.
    :return: **array**: A numpy.ndarray of shape (n, 4) holding ``[x, y, w, h]`` rows.
    """
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([[b.x, b.y, b.w, b.h] for b in boxes], dtype=float)

def _pairwise_intersection(a, b):
    ax1, ay1 = a[:, 0][:, None], a[:, 1][:, None]
    ax2, ay2 = (a[:, 0] + a[:, 2])[:, None], (a[:, 1] + a[:, 3])[:, None]
    bx1, by1 = b[:, 0][None, :], b[:, 1][None, :]
    bx2, by2 = (b[:, 0] + b[:, 2])[None, :], (b[:, 1] + b[:, 3])[None, :]
    iw = np.maximum(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0)
    ih = np.maximum(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0)
    return iw * ih

def _array_area(a):
    return ((a[:, 0] + a[:, 2]) - a[:, 0]) * ((a[:, 1] + a[:, 3]) - a[:, 1])

def iou_matrix(a, b):
    """
    Pairwise intersection over union.

    :param numpy.ndarray a: An array of shape (n, 4) of ``[x, y, w, h]`` rows.
    :param numpy.ndarray b: An array of shape (m, 4) of ``[x, y, w, h]`` rows.
    :return: **ious**: A numpy.ndarray of shape (n, m).
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    inter = _pairwise_intersection(a, b)
    union = _array_area(a)[:, None] + _array_area(b)[None, :] - inter
    return inter / union

def iof_matrix(a, b):
    """
    Pairwise intersection over the area of the rows of ``a``.

    :param numpy.ndarray a: An array of shape (n, 4) of ``[x, y, w, h]`` rows (foreground boxes).
    :param numpy.ndarray b: An array of shape (m, 4) of ``[x, y, w, h]`` rows.
    :return: **iofs**: A numpy.ndarray of shape (n, m).
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    inter = _pairwise_intersection(a, b)
    return inter / _array_area(a)[:, None]
