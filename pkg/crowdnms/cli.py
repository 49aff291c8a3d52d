"""
Command line interface: ``crowdnms {synth,suppress,eval,sweep,field}``.

Boxes in every file are ``[x, y, w, h]`` with ``(x, y)`` the top-left corner. Exit codes: 0 on success, 2 when an
input breaks its contract, 3 on IO failures.
"""
import argparse
import logging
import sys
from crowdnms.suppression import METHODS, FALLBACKS, SuppressionConfig, canonical_method, suppression_field
from crowdnms.datasets import (GeneratorConfig, OracleConfig, generate_scenes, generate_proposals, annotate_oracle,
                               crowd_statistics, verify_oracle)
from crowdnms.formats import read_scenes, write_scenes, read_detections, write_detections
from crowdnms.benchmark import parse_grid, suppress_records, evaluate_records, run_sweep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONTRACT = 2
EXIT_IO = 3

class RunConfig(object):
    """
    Everything a subcommand needs, gathered from the parsed command line.

    :param SuppressionConfig suppression: The suppression configuration.
    :param dict paths: Input and output paths by role (``scenes``, ``detections``, ``input``, ``output``, ``curve``).
    :param int k: Recall@k and per-image evaluation cap.
    :param float iou_threshold: Evaluation IoU threshold.
    :param list methods: Methods swept or plotted.
    :param list nt_grid: N_t values swept.
    :param list dt_grid: d_t values swept (NOH).
    :param list sigma_grid: sigma values swept (NOH).
    :param int workers: Threads used for per-image suppression.
    """
    def __init__(self, suppression, paths=None, k=100, iou_threshold=0.5, methods=None, nt_grid=None, dt_grid=None,
                 sigma_grid=None, workers=1):
        self.suppression = suppression
        self.paths = dict(paths or {})
        self.k = k
        self.iou_threshold = iou_threshold
        self.methods = list(methods) if methods else [suppression.method]
        self.nt_grid = list(nt_grid) if nt_grid else [suppression.nms_threshold]
        self.dt_grid = list(dt_grid) if dt_grid else [suppression.density_threshold]
        self.sigma_grid = list(sigma_grid) if sigma_grid else [suppression.noh_sigma]
        if int(workers) < 1:
            raise ValueError('RunConfig: workers must be at least 1, got %r.' % (workers,))
        self.workers = int(workers)
    @classmethod
    def from_args(cls, args):
        """
        Builds a RunConfig from an argparse namespace; flags a subcommand does not define take their defaults.
        """
        get = lambda name, default=None: getattr(args, name, default)
        max_dets = get('max_dets', 100)
        suppression = SuppressionConfig(method=get('method', 'greedy'), nms_threshold=get('nt', 0.5),
                                        soft_sigma=get('soft_sigma', 0.5), noh_sigma=get('noh_sigma', 0.2),
                                        density_threshold=get('dt', 0.3), fallback=get('fallback', 'greedy'),
                                        score_floor=get('score_floor', 0.0),
                                        max_detections=None if max_dets == 0 else max_dets,
                                        verbose=get('verbose', False))
        paths = {name: get(name) for name in ('scenes', 'detections', 'input', 'output', 'curve')
                 if get(name) is not None}
        methods = get('methods')
        methods = [canonical_method(m) for m in methods.split(',') if m.strip()] if methods else None
        grid = lambda name: parse_grid(get(name)) if get(name) else None
        k = get('k', 100)
        return cls(suppression, paths, k=None if k == 0 else k, iou_threshold=get('iou', 0.5), methods=methods,
                   nt_grid=grid('nt_grid'), dt_grid=grid('dt_grid'), sigma_grid=grid('sigma_grid'),
                   workers=get('workers', 1))

def _check_paired(scenes, records):
    known = set(s.image_id for s in scenes)
    for image_id, _ in records:
        if image_id not in known:
            raise ValueError('image_id %r of the detection file is not in the scene file.' % (image_id,))

def cmd_synth(args):
    """
    Writes a synthetic scene file and the matching pre-suppression detection file with the oracle side-channel.
    """
    generator = GeneratorConfig(scenes=args.scenes, gt_per_scene=(args.gt_min, args.gt_max),
                                overlap_pair_fraction=args.overlap_fraction,
                                pair_iou_range=(args.pair_iou_min, args.pair_iou_max),
                                proposals_per_gt=args.proposals_per_gt, jitter_center_std=args.jitter_center,
                                jitter_logsize_std=args.jitter_logsize, score_noise_std=args.score_noise,
                                seed=args.seed, verbose=args.verbose)
    oracle = OracleConfig(mean_noise_std=args.mean_noise, density_noise_std=args.density_noise,
                          perfect=args.perfect, seed=args.seed)
    scenes = generate_scenes(generator)
    records = []
    for scene in scenes:
        records.append((scene.image_id, annotate_oracle(generate_proposals(scene, generator), scene, oracle)))
    write_scenes(args.scenes_out, scenes)
    write_detections(args.detections_out, records)
    statistics = crowd_statistics(scenes)
    logger.info('wrote %d scenes: %.2f persons and %.2f overlapping pairs (IoU > 0.5) per image, mean density %.3f.',
                statistics['images'], statistics['persons_per_image'], statistics['overlaps_per_image'],
                statistics['mean_density'])
    if args.verify:
        scenes = {s.image_id: s for s in read_scenes(args.scenes_out)}
        failed = 0
        for image_id, detections in read_detections(args.detections_out):
            failures = verify_oracle(scenes[image_id], detections)
            if failures:
                failed += 1
                logger.error('%s: %d hallucinated boxes match no ground truth (first: detection %d).',
                             image_id, len(failures), failures[0])
        if failed:
            raise ValueError('synth --verify: %d images carry hallucinated boxes matching no ground truth.' % failed)
        logger.info('verified the hallucinated boxes of %d images.', len(scenes))
    return EXIT_OK

def cmd_suppress(args):
    """
    Suppresses every image of a detection file and writes the kept detections with their final scores.
    """
    run = RunConfig.from_args(args)
    records = read_detections(run.paths['input'])
    write_detections(run.paths['output'], suppress_records(records, run.suppression, run.workers))
    return EXIT_OK

def cmd_eval(args):
    """
    Prints AP, Recall@k and MR^-2 of a detection file against a scene file.
    """
    run = RunConfig.from_args(args)
    scenes = read_scenes(run.paths['scenes'])
    records = read_detections(run.paths['detections'])
    _check_paired(scenes, records)
    report = evaluate_records(scenes, records, run.k, run.iou_threshold)
    sys.stdout.write(report.to_text())
    if 'curve' in run.paths:
        report.curve_frame().to_csv(run.paths['curve'], index=False, lineterminator='\n')
    return EXIT_OK

def cmd_sweep(args):
    """
    Suppresses and evaluates a detection file over a grid of hyper-parameters, one CSV row per grid point.
    """
    run = RunConfig.from_args(args)
    scenes = read_scenes(run.paths['scenes'])
    records = read_detections(run.paths['detections'])
    _check_paired(scenes, records)
    table = run_sweep(scenes, records, run.suppression, run.methods, run.nt_grid, run.dt_grid, run.sigma_grid,
                      run.k, run.iou_threshold, run.workers)
    table.to_csv(run.paths['output'], index=False, lineterminator='\n')
    logger.info('wrote %d sweep rows to %s.', len(table), run.paths['output'])
    return EXIT_OK

def cmd_field(args):
    """
    Writes the suppression degree each method imposes on a unit-score neighbor over a grid of relative offsets.
    """
    run = RunConfig.from_args(args)
    mean = [float(v) for v in args.mu.split(',')]
    if len(mean) != 4:
        raise ValueError('field: --mu needs 4 comma separated coefficients, got %r.' % (args.mu,))
    methods = run.methods if args.methods else list(METHODS)
    frame = suppression_field(run.suppression, methods, resolution=args.resolution, extent=args.extent,
                              density=args.density, mean=mean)
    frame.to_csv(run.paths['output'], index=False, lineterminator='\n')
    return EXIT_OK

def _add_suppression_flags(parser):
    group = parser.add_argument_group('suppression')
    group.add_argument('--method', default='greedy', help='one of %s (default greedy)' % ', '.join(METHODS))
    group.add_argument('--nt', type=float, default=0.5, help='NMS IoU threshold N_t (default 0.5)')
    group.add_argument('--soft-sigma', type=float, default=0.5, help='Gaussian Soft-NMS sigma (default 0.5)')
    group.add_argument('--noh-sigma', type=float, default=0.2, help='nearby-object Gaussian sigma (default 0.2)')
    group.add_argument('--dt', type=float, default=0.3, help='density threshold d_t of NOH (default 0.3)')
    group.add_argument('--fallback', default='greedy', choices=FALLBACKS,
                       help='rule NOH applies below d_t (default greedy)')
    group.add_argument('--score-floor', type=float, default=0.0,
                       help='drop detections whose final score is at or below this (default 0)')
    group.add_argument('--max-dets', type=int, default=100, help='detections kept per image, 0 for all (default 100)')

def _add_eval_flags(parser):
    group = parser.add_argument_group('evaluation')
    group.add_argument('--k', type=int, default=100, help='Recall@k and per-image cap, 0 for all (default 100)')
    group.add_argument('--iou', type=float, default=0.5, help='matching IoU threshold (default 0.5)')

def build_parser():
    parser = argparse.ArgumentParser(prog='crowdnms', description=__doc__.strip().splitlines()[0],
                                     epilog='Boxes are [x, y, w, h] with (x, y) the top-left corner.')
    parser.add_argument('--verbose', action='store_true', help='log debugging details to stderr')
    parser.add_argument('--quiet', action='store_true', help='log errors only')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    synth = commands.add_parser('synth', help='generate a synthetic crowded benchmark')
    synth.add_argument('--scenes-out', required=True, help='scene file to write')
    synth.add_argument('--detections-out', required=True, help='pre-NMS detection file to write')
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--scenes', type=int, default=100)
    synth.add_argument('--gt-min', type=int, default=10)
    synth.add_argument('--gt-max', type=int, default=30)
    synth.add_argument('--overlap-fraction', type=float, default=0.5)
    synth.add_argument('--pair-iou-min', type=float, default=0.5)
    synth.add_argument('--pair-iou-max', type=float, default=0.7)
    synth.add_argument('--proposals-per-gt', type=int, default=8)
    synth.add_argument('--jitter-center', type=float, default=0.05)
    synth.add_argument('--jitter-logsize', type=float, default=0.05)
    synth.add_argument('--score-noise', type=float, default=0.05)
    synth.add_argument('--mean-noise', type=float, default=0.05)
    synth.add_argument('--density-noise', type=float, default=0.05)
    synth.add_argument('--perfect', action='store_true', help='noise-free oracle')
    synth.add_argument('--verify', action='store_true', help='check every written mu decodes to a ground-truth box')
    synth.set_defaults(handler=cmd_synth)

    sup = commands.add_parser('suppress', help='run NMS on a detection file')
    sup.add_argument('--input', required=True)
    sup.add_argument('--output', required=True)
    sup.add_argument('--workers', type=int, default=1)
    _add_suppression_flags(sup)
    sup.set_defaults(handler=cmd_suppress)

    ev = commands.add_parser('eval', help='evaluate a detection file')
    ev.add_argument('--detections', required=True)
    ev.add_argument('--scenes', required=True)
    ev.add_argument('--curve', help='write the PR/FPPI curve as CSV')
    _add_eval_flags(ev)
    ev.set_defaults(handler=cmd_eval)

    sweep = commands.add_parser('sweep', help='evaluate a grid of suppression hyper-parameters')
    sweep.add_argument('--detections', required=True, help='pre-NMS detection file')
    sweep.add_argument('--scenes', required=True)
    sweep.add_argument('--output', required=True, help='CSV to write')
    sweep.add_argument('--methods', help='comma separated methods (default: --method)')
    sweep.add_argument('--nt-grid', help='N_t values, a comma list or start:stop:step (default: --nt)')
    sweep.add_argument('--dt-grid', help='d_t values for NOH (default: --dt)')
    sweep.add_argument('--sigma-grid', help='sigma values for NOH (default: --noh-sigma)')
    sweep.add_argument('--workers', type=int, default=1)
    _add_suppression_flags(sweep)
    _add_eval_flags(sweep)
    sweep.set_defaults(handler=cmd_sweep)

    field = commands.add_parser('field', help='write the suppression degree surface as CSV')
    field.add_argument('--output', required=True)
    field.add_argument('--methods', help='comma separated methods (default: all)')
    field.add_argument('--resolution', type=int, default=41)
    field.add_argument('--extent', type=float, default=1.0)
    field.add_argument('--density', type=float, default=0.5)
    field.add_argument('--mu', default='0.25,0,0,0', help='hallucinated dx,dy,dw,dh (default 0.25,0,0,0)')
    _add_suppression_flags(field)
    field.set_defaults(handler=cmd_field)
    return parser

def main(argv=None):
    """
    Runs one subcommand and returns its exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as stop:
        return stop.code if isinstance(stop.code, int) else EXIT_CONTRACT
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.handler(args)
    except OSError as error:
        logger.error('%s', error)
        return EXIT_IO
    except (ValueError, RuntimeError) as error:
        logger.error('%s', error)
        return EXIT_CONTRACT
