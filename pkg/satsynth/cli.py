"""
Command-line entry point: ``satsynth <command> [options]``.

Every command starts from an :class:`~satsynth.experiments.ExperimentPlan`:
the ``--scale`` preset, then the YAML file given with ``--config``, then the
``--seed`` and ``--out`` flags.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from satsynth import __version__
from satsynth.checkpoint import Checkpoint
from satsynth.exceptions import InvalidConfig, SatsynthError
from satsynth.experiments import (
    ExperimentPlan,
    build_report,
    run_lambda_sweep,
    run_mix_sweep,
    run_substitution,
    seeded,
)
from satsynth.fid import compute_fid, get_extractor
from satsynth.manifest import DatasetManifest, scan_tiles, validate_manifest
from satsynth.metrics import class_names_for, write_iou_table
from satsynth.segmentation import evaluate, train_downstream
from satsynth.synthesis import MODES, SynthesisJob, synthesize_dataset
from satsynth.toy import make_toy_splits
from satsynth.upstream import train_upstream
from satsynth.utils import derive_seed


log = logging.getLogger('satsynth')


def load_plan(args):
    doc = {}
    if args.config:
        with open(args.config, encoding='utf-8') as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise InvalidConfig('plan', None, '%s is not a mapping' % args.config)
    scale = args.scale or doc.get('scale', 'desk')
    plan = ExperimentPlan.preset(scale).merged(doc)
    changes = {'scale': scale}
    if args.seed is not None:
        changes['seed'] = args.seed
    if args.out is not None:
        changes['out'] = args.out
    return plan.replace(**changes)


def _load_manifest(path):
    if path is None:
        return None
    return DatasetManifest.load(path)


def cmd_ingest(args, plan):
    manifest = scan_tiles(args.directory, split=args.split)
    validate_manifest(manifest, strict=True)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / ('%s.jsonl' % args.split))


def cmd_make_toy(args, plan):
    make_toy_splits(seeded(plan).toy, Path(plan.out))


def cmd_train_upstream(args, plan):
    config = seeded(plan).upstream
    if args.weight is not None:
        config = config.replace(diversity_weight=args.weight)
    train_upstream(config, Path(plan.out), manifest=_load_manifest(args.tiles),
                   resume_from=args.resume, stop_after=args.stop_after)


def cmd_synthesize(args, plan):
    job = SynthesisJob(checkpoint=args.checkpoint, masks=args.masks, mode=args.mode,
                       copies=args.copies, overlap=args.overlap if args.overlap is not None
                       else plan.overlap, seed=derive_seed(plan.seed, 'synthesis'))
    synthesize_dataset(job, Path(plan.out))


def cmd_eval_fid(args, plan):
    extractor = get_extractor(args.extractor or plan.extractor,
                              seed=derive_seed(plan.seed, 'extractor'))
    digest = Checkpoint.load(args.checkpoint).digest() if args.checkpoint else None
    report = compute_fid(DatasetManifest.load(args.real), DatasetManifest.load(args.synthetic),
                         extractor, args.mode, patch_size=args.patch or
                         plan.upstream.gan.resolution, checkpoint_hash=digest)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / 'fid.json')
    print('%.6f' % report.value)


def cmd_train_downstream(args, plan):
    config = seeded(plan).downstream
    if args.channels is not None:
        config = config.replace(in_channels=args.channels)
    result = train_downstream(config, DatasetManifest.load(args.train),
                              DatasetManifest.load(args.val), out_dir=Path(plan.out))
    log.info('Best validation mIoU %.4f at epoch %d', result.checkpoint.val_miou or 0.0,
             result.checkpoint.epoch)


def cmd_eval_seg(args, plan):
    metrics, cm = evaluate(args.checkpoint, DatasetManifest.load(args.test))
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)
    names = class_names_for(cm.num_classes)
    write_iou_table([(args.label, metrics)], out / 'iou.csv', names)
    with open(out / 'confusion.json', 'w', encoding='utf-8') as f:
        json.dump({'counts': cm.counts.tolist(), 'classes': names}, f, indent=2)
        f.write('\n')
    print(metrics.row()[-1])


def cmd_sweep_lambda(args, plan):
    if args.lambdas:
        plan = plan.replace(lambdas=args.lambdas)
    run_lambda_sweep(plan.replace(kind='lambda_sweep'))


def cmd_sweep_mix(args, plan):
    if args.p_grid:
        plan = plan.replace(p_grid=args.p_grid)
    run_mix_sweep(plan.replace(kind='mix_sweep'))


def cmd_substitution(args, plan):
    run_substitution(plan.replace(kind='substitution'))


def cmd_report(args, plan):
    build_report(Path(plan.out))


def config_epilog():
    """List the documented plan keys accepted by ``--config``."""
    keys = list(ExperimentPlan.documented_keys())
    width = max(len(key) for key, _ in keys)
    lines = ['  %-*s  %s' % (width, key, doc) for key, doc in keys]
    return 'config keys:\n' + '\n'.join(lines)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML plan file (keys listed by satsynth --help)')
    common.add_argument('--seed', type=int, help='root seed of every random stream')
    common.add_argument('--out', help='output directory')
    common.add_argument('--scale', choices=('desk', 'full'), help='preset to start from')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    common.add_argument('-q', '--quiet', action='store_true', help='warnings only')

    parser = argparse.ArgumentParser(
        prog='satsynth', description='Mask-conditional satellite image synthesis '
        'and downstream segmentation experiments.',
        epilog=config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version=__version__)
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    def add(name, func, help):
        p = sub.add_parser(name, help=help, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add('ingest', cmd_ingest, 'build and validate a manifest of tile containers')
    p.add_argument('directory')
    p.add_argument('--split', default='train', choices=('train', 'val', 'test'))

    add('make-toy', cmd_make_toy, 'write the procedural toy train/val/test tiles')

    p = add('train-upstream', cmd_train_upstream, 'train one generator')
    p.add_argument('--tiles', help='training manifest (default: upstream.tiles)')
    p.add_argument('--lambda', dest='weight', type=float, help='diversity weight')
    p.add_argument('--resume', help='checkpoint to resume from')
    p.add_argument('--stop-after', type=int, help='stop after this many steps')

    p = add('synthesize', cmd_synthesize, 'generate synthetic tiles for a mask manifest')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--masks', required=True, help='manifest whose masks are used')
    p.add_argument('--mode', choices=MODES, default='prior')
    p.add_argument('--copies', type=int, default=1)
    p.add_argument('--overlap', type=int)

    p = add('eval-fid', cmd_eval_fid, 'FID between a real and a synthetic manifest')
    p.add_argument('--real', required=True)
    p.add_argument('--synthetic', required=True)
    p.add_argument('--mode', default='prior', help='tag stored with the value')
    p.add_argument('--extractor', choices=('random', 'inception'))
    p.add_argument('--patch', type=int)
    p.add_argument('--checkpoint', help='generator checkpoint, recorded by hash')

    p = add('train-downstream', cmd_train_downstream, 'train a U-Net')
    p.add_argument('--train', required=True)
    p.add_argument('--val', required=True)
    p.add_argument('--channels', type=int, choices=(3, 4))

    p = add('eval-seg', cmd_eval_seg, 'per-class IoU of a U-Net on a test manifest')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--test', required=True)
    p.add_argument('--label', default='model')

    p = add('sweep-lambda', cmd_sweep_lambda, 'diversity weight sweep (mIoU, FID)')
    p.add_argument('--lambdas', type=float, nargs='+')

    p = add('sweep-mix', cmd_sweep_mix, 'mIoU over the synthetic proportion p')
    p.add_argument('--p-grid', dest='p_grid', type=float, nargs='+')

    add('substitution', cmd_substitution, 'real versus synthetic training sets')
    add('report', cmd_report, 'merge finished tables into report.json and report.md')
    return parser


def setup_logging(verbose=False, quiet=False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(name)s: %(message)s'))
    log.handlers[:] = [handler]
    log.setLevel(level)
    log.propagate = False


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        plan = load_plan(args)
        args.func(args, plan)
    except SatsynthError as e:
        log.error('%s', e)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
