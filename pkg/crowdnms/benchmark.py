"""Batch suppression over many images and hyper-parameter sweeps."""
from concurrent.futures import ThreadPoolExecutor
import logging
import math
import numpy as np
import pandas as pd
from crowdnms.suppression import suppress
from crowdnms.metrics import evaluate

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['method', 'nt', 'dt', 'sigma', 'ap', 'recall', 'mr2']

def parse_grid(text):
    """
    Parses a grid of real values, either a comma separated list (``0.4,0.5,0.6``) or an inclusive range
    ``start:stop:step`` (``0.2:0.5:0.05`` gives 7 values). Values are rounded to 10 decimals.

    :param str text: The grid.
    :return: **values**: A non-empty list of floats.
    """
    text = str(text).strip()
    try:
        if ':' in text:
            parts = [float(p) for p in text.split(':')]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if not step > 0 or stop < start:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = [round(start + i * step, 10) for i in range(count)]
        else:
            values = [round(float(p), 10) for p in text.split(',') if p.strip()]
    except ValueError:
        raise ValueError('parse_grid: expected a comma list or start:stop:step, got %r.' % (text,))
    if not values:
        raise ValueError('parse_grid: empty grid %r.' % (text,))
    return values

def suppress_records(records, config, workers=1):
    """
    Suppresses every image of a detection file. Images are independent and may be processed by a thread pool;
    the output keeps the input order whatever the number of workers.

    :param list records: ``(image_id, detections)`` pairs.
    :param SuppressionConfig config: The suppression configuration.
    :param int workers: Number of threads.
    :return: **records**: ``(image_id, kept detections)`` pairs, the kept detections carrying their final scores in
        result order.
    """
    if int(workers) < 1:
        raise ValueError('suppress_records: workers must be at least 1, got %r.' % (workers,))

    def run(record):
        image_id, detections = record
        try:
            return image_id, suppress(detections, config).apply(detections)
        except ValueError as error:
            raise ValueError('image %s: %s' % (image_id, error))

    if workers == 1:
        output = [run(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            output = list(pool.map(run, records))
    logger.info('%s: suppressed %d images, %d -> %d detections.', config.method, len(output),
                sum(len(d) for _, d in records), sum(len(d) for _, d in output))
    return output

def evaluate_records(scenes, records, k=100, iou_threshold=0.5):
    """
    :func:`crowdnms.metrics.evaluate` on ``(image_id, detections)`` pairs.
    """
    by_image = {}
    for image_id, detections in records:
        if image_id in by_image:
            raise ValueError('evaluate_records: duplicate image_id %r.' % (image_id,))
        by_image[image_id] = detections
    return evaluate(scenes, by_image, k=k, iou_threshold=iou_threshold)

def sweep_points(methods, nt_grid, dt_grid, sigma_grid):
    """
    Grid points in row order: methods, then N_t, then (NOH only) d_t, then sigma. Methods other than NOH get one
    point per N_t with ``dt`` and ``sigma`` left as ``None``.
    """
    points = []
    for method in methods:
        for nt in nt_grid:
            if method == 'noh':
                for dt in dt_grid:
                    for sigma in sigma_grid:
                        points.append((method, nt, dt, sigma))
            else:
                points.append((method, nt, None, None))
    return points

def run_sweep(scenes, records, config, methods, nt_grid, dt_grid=None, sigma_grid=None, k=100, iou_threshold=0.5,
              workers=1):
    """
    Suppresses and evaluates the detections at every grid point.

    :param list scenes: Ground truth.
    :param list records: Pre-suppression ``(image_id, detections)`` pairs.
    :param SuppressionConfig config: Base configuration; the swept fields are replaced per point.
    :param list methods: Canonical method names.
    :param list nt_grid: N_t values.
    :param list dt_grid: d_t values for NOH; defaults to ``config.density_threshold``.
    :param list sigma_grid: NOH sigma values; defaults to ``config.noh_sigma``.
    :param int k: Recall@k and per-image cap.
    :param float iou_threshold: Evaluation IoU threshold.
    :param int workers: Threads used for suppression.
    :return: **table**: A pandas.DataFrame with columns ``method, nt, dt, sigma, ap, recall, mr2``.
    """
    dt_grid = [config.density_threshold] if not dt_grid else list(dt_grid)
    sigma_grid = [config.noh_sigma] if not sigma_grid else list(sigma_grid)
    if not methods or not nt_grid:
        raise ValueError('run_sweep: methods and the N_t grid must be non-empty.')
    rows = []
    for method, nt, dt, sigma in sweep_points(methods, nt_grid, dt_grid, sigma_grid):
        changes = {'method': method, 'nms_threshold': nt}
        if method == 'noh':
            changes.update(density_threshold=dt, noh_sigma=sigma)
        point = config.replace(**changes)
        report = evaluate_records(scenes, suppress_records(records, point, workers), k, iou_threshold)
        rows.append((method, nt, np.nan if dt is None else dt, np.nan if sigma is None else sigma,
                     report.ap, report.recall, report.mr2))
        logger.info('%s nt=%g dt=%s sigma=%s: AP %.4f, Recall %.4f, MR-2 %.4f.', method, nt, dt, sigma,
                    report.ap, report.recall, report.mr2)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
