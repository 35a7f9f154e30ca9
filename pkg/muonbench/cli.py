"""
Command-line entry point.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 divergence.
"""
import argparse
import dataclasses
import logging
import sys

from .config import load_config
from .errors import ConfigError, MuonbenchError, NumericError, ReportError
from .harness import run_rate_check, train
from .msign import NOMINAL_BAND, PRESETS, band_survey
from .reports import emit_reports
from .sweeps import ablate, batch_sweep, telescope_sweep

logger = logging.getLogger(__name__)

__all__ = ['main']

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def parse_shape(text):
    try:
        rows, cols = (int(x) for x in text.lower().split('x'))
    except ValueError:
        raise ConfigError("expected ROWSxCOLS, got {!r}".format(text), '--shape')
    if rows < 1 or cols < 1:
        raise ConfigError("dimensions must be positive, got {!r}".format(text),
                          '--shape')
    return rows, cols


def cmd_msign_check(args):
    if args.trials < 1:
        raise ConfigError("must be at least 1, got {}".format(args.trials), '--trials')
    if args.k < 1:
        raise ConfigError("must be at least 1, got {}".format(args.k), '--k')
    shape = parse_shape(args.shape)
    band = tuple(args.band)
    survey = band_survey(shape, coeffs=args.preset, k=args.k, trials=args.trials,
                         seed=args.seed, band=band)
    print("shape {}x{}, preset {}, k={}, trials={}".format(
          shape[0], shape[1], survey.coeffs.label, survey.k, survey.trials))
    print("singular values: min {:.6f}, max {:.6f}; band ({}, {})".format(
          survey.worst_min, survey.worst_max, band[0], band[1]))
    print("max relative deviation from exact msign: {:.6g}".format(
          survey.max_deviation))
    if survey.passed:
        print("all trials inside the band")
        return EXIT_OK
    print("{} of {} trials left the band; worst trial seed {}".format(
          survey.violations, survey.trials, survey.worst_seed))
    return EXIT_FAILED


def _load(args):
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.precision is not None:
        overrides['precision'] = args.precision
    if overrides:
        config.train = dataclasses.replace(config.train, **overrides).validate()
    if args.out is not None:
        config.out_dir = args.out
    return config


def cmd_train(args):
    config = _load(args)
    record = train(config.train)
    emit_reports(record, config.out_dir)
    s = record.summary
    print("{}: {} eval rows, final val_loss {!r}, tokens_to_target {}".format(
          record.run_id, len(record.rows), s.final_val_loss, s.tokens_to_target))
    if s.diverged:
        print("run diverged")
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_sweep(args):
    config = _load(args)
    result = batch_sweep(config.train, config.sweep)
    emit_reports(result, config.out_dir)
    for batch_size in result.batch_grid:
        print("B={}: adamw {}, muon {}, R={}".format(
              batch_size, result.tokens('adamw', batch_size),
              result.tokens('muon', batch_size), result.ratios[batch_size]))
    print("R nondecreasing in B: {}".format(result.monotonicity.nondecreasing))
    return EXIT_OK


def cmd_ablate(args):
    config = _load(args)
    table = ablate(config.train, config.ablation)
    emit_reports(table, config.out_dir)
    print("{:<16} {:>14} {:>10} {:>7} {:>9}".format(
          'cell', 'final_val_loss', 'steps', 'spikes', 'state'))
    for cell in table.cells:
        s = cell.record.summary
        print("{:<16} {:>14.6g} {:>10} {:>7} {:>9}{}".format(
              cell.name, s.final_val_loss, s.steps_to_target or '-',
              s.loss_spike_count, s.state_scalar_count,
              ' diverged' if s.diverged else ''))
    return EXIT_OK


def cmd_telescope(args):
    config = _load(args)
    result = telescope_sweep(config.train, config.telescope)
    emit_reports(result, config.out_dir)
    for stage in result.stages:
        print("width {}: best eta {!r}, lambda {!r}, val_loss {!r}, extent {:.4g}{}".format(
              stage.width, stage.best_eta, stage.best_lambda, stage.best_loss,
              stage.eta_extent,
              '' if stage.transferred is None
              else ', transferred' if stage.transferred else ', moved'))
    return EXIT_OK


def cmd_rate_check(args):
    config = _load(args)
    result = run_rate_check(config.train, config.rate_check)
    emit_reports(result.records, config.out_dir)
    print("slopes: {}".format(', '.join('{:.4f}'.format(s) for s in result.slopes)))
    print("mean slope {:.4f}, threshold {}".format(result.mean_slope,
                                                    result.threshold))
    return EXIT_OK if result.passed else EXIT_FAILED


def build_parser():
    parser = argparse.ArgumentParser(
        prog='muonbench',
        description="Muon versus AdamW: msign checks, training runs and sweeps.")
    parser.add_argument("--verbose", "-v", action='count', default=0,
                        help="log more (-v for info, -vv for debug)")
    sub = parser.add_subparsers(dest='command')
    sub.required = True

    check = sub.add_parser('msign-check', help="Newton-Schulz singular value band")
    check.add_argument("--shape", default='64x64', help="matrix shape, ROWSxCOLS")
    check.add_argument("--k", type=int, default=5, help="Newton-Schulz steps")
    check.add_argument("--preset", choices=sorted(PRESETS), default='optimized',
                       help="coefficient preset")
    check.add_argument("--trials", type=int, default=200,
                       help="number of random matrices")
    check.add_argument("--seed", type=int, default=0, help="random seed")
    check.add_argument("--band", type=float, nargs=2, default=list(NOMINAL_BAND),
                       metavar=('LOW', 'HIGH'), help="open singular value band")
    check.set_defaults(func=cmd_msign_check)

    commands = [('train', cmd_train, "train one run"),
                ('sweep', cmd_sweep, "batch-size sweep and token ratio"),
                ('ablate', cmd_ablate, "component ablation"),
                ('telescope', cmd_telescope, "telescoping width sweep"),
                ('rate-check', cmd_rate_check, "gradient-norm decay rate")]
    for name, func, help_text in commands:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", "-o", default=None, help="output directory")
        p.add_argument("--precision", choices=['f32', 'f64'], default=None,
                       help="override the precision")
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error("config error: %s", e)
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_USAGE
    except ReportError as e:
        logger.error("cannot write reports: %s", e)
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_DIVERGED
    except MuonbenchError as e:
        print("error: {}".format(e), file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
