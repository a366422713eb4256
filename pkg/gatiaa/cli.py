"""
Command-line entry point.

Subcommands: synth, build-graph, train, eval, ablate, gradcheck.
Exit codes: 0 success, 1 verification failure, 2 usage or input error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from gatiaa.config import RunConfig, configure_logging, load_env, load_run_config, parse_overrides
from gatiaa.graph.afg import afg_write
from gatiaa.graph.feature_graph import FeatureGraph, build_feature_graph
from gatiaa.graph.manifest import ManifestEntry, load_split, read_manifest, split_counts, split_for_id, write_manifest
from gatiaa.graph.synth import synth_generate
from gatiaa.models import build_model
from gatiaa.utils.errors import ConfigError, GatiaaError, GraphError, ManifestError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_INPUT = 2


def _add_common(parser: argparse.ArgumentParser, out_help: str):
    parser.add_argument('--config', help='key=value configuration file')
    parser.add_argument('--seed', type=int, help='overrides train.seed (and data.synth_seed)')
    parser.add_argument('--deterministic', action='store_true', default=None,
                        help='serial execution with fixed shuffling')
    parser.add_argument('--out', help=out_help)
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='dotted-key override, may repeat')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='gatiaa', description='Graph attention aesthetics toolkit')
    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', help='write planted-signal AFG files and a manifest')
    _add_common(synth, 'output directory')
    synth.add_argument('--count', type=int, help='number of graphs (default data.synth_count)')

    build = sub.add_parser('build-graph', help='build one AFG file from raw feature maps')
    build.add_argument('maps', nargs='+', help='raw float32 (d, w, h) maps, each with a .json sidecar')
    build.add_argument('--out', required=True, help='AFG file to write')
    build.add_argument('--id', default=None, help='graph id (default: output file stem)')

    train = sub.add_parser('train', help='train a model on a manifest')
    _add_common(train, 'checkpoint directory (overrides train.checkpoint_dir)')
    train.add_argument('--manifest', help='overrides data.manifest')
    train.add_argument('--resume', help='checkpoint to continue from')

    evaluate = sub.add_parser('eval', help='evaluate a checkpoint on the test split')
    _add_common(evaluate, 'report directory')
    evaluate.add_argument('--checkpoint', help='model checkpoint')
    evaluate.add_argument('--manifest', help='overrides data.manifest')
    evaluate.add_argument('--oracle-replay', action='store_true', help='use labels as predictions')

    ablate = sub.add_parser('ablate', help='train and compare all variants')
    _add_common(ablate, 'table directory')
    ablate.add_argument('--manifest', help='overrides data.manifest (default: synthetic data)')

    gradcheck = sub.add_parser('gradcheck', help='finite-difference check of every layer')
    gradcheck.add_argument('--seed', type=int, default=0)
    gradcheck.add_argument('--corrupt', nargs='?', const='linear', default=None, metavar='UNIT',
                           help='scale one analytic gradient by 1.5 in UNIT (default linear)')
    gradcheck.add_argument('--unit', action='append', default=None, help='restrict to unit(s)')
    return parser


def _run_config(args, env) -> RunConfig:
    overrides = parse_overrides(args.set)
    if getattr(args, 'manifest', None):
        overrides['data.manifest'] = args.manifest
    return load_run_config(args.command, args.config, overrides, args.seed, args.deterministic, env)


# ------------------------------------------------------------------ commands

def cmd_synth(config: RunConfig, out_dir: str, count: Optional[int] = None) -> List[ManifestEntry]:
    """Write `count` AFG files plus manifest.csv with the hash split."""
    count = count if count is not None else config.data.synth_count
    out = Path(out_dir)
    graphs = synth_generate(config.data.synth_seed, count, config.synth)
    entries = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for g in graphs:
            afg_write(g, out / f"{g.id}.afg")
            entries.append(ManifestEntry(g.id, f"{g.id}.afg", split_for_id(g.id)))
        write_manifest(entries, out / 'manifest.csv')
    except OSError as e:
        raise GatiaaError(f"cannot write to {out}: {e.strerror}", {'path': str(out)})
    logger.info(f"wrote {len(entries)} graphs to {out}: {split_counts(entries)}")
    return entries


def read_feature_map(path) -> np.ndarray:
    """Raw little-endian float32 (d, w, h) map described by `<path>.json`."""
    from gatiaa.schemas import FeatureMapSidecarSchema, load_section

    path = Path(path)
    sidecar_path = path.with_name(path.name + '.json')
    if not path.is_file():
        raise GraphError(f"feature map not found: {path}", {'path': str(path)})
    if not sidecar_path.is_file():
        raise GraphError(f"{path}: missing sidecar {sidecar_path.name}", {'path': str(path)})
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise GraphError(f"{sidecar_path}: malformed sidecar ({e.msg})", {'path': str(sidecar_path)})
    if not isinstance(sidecar, dict):
        raise GraphError(f"{sidecar_path}: sidecar must be a JSON object", {'path': str(sidecar_path)})
    try:
        dims = load_section(FeatureMapSidecarSchema(), sidecar, 'sidecar')
    except ConfigError as e:
        raise GraphError(f"{sidecar_path}: {e.message}", {'path': str(sidecar_path)})
    raw = np.fromfile(path, dtype='<f4')
    expected = dims['d'] * dims['w'] * dims['h']
    if raw.size * 4 != path.stat().st_size or raw.size != expected:
        raise GraphError(f"{path}: {path.stat().st_size} bytes, sidecar {dims} needs {expected * 4}",
                         {'path': str(path), 'expected': expected * 4})
    return raw.reshape(dims['d'], dims['w'], dims['h'])


def _log_effective(section: str, settings: Dict[str, object]):
    """Log command settings in the `config key=value` form used for run configs."""
    for key in sorted(settings):
        logger.info(f"config {section}.{key}={settings[key]}")


def cmd_build_graph(map_files: Sequence[str], out: str, graph_id: Optional[str] = None) -> FeatureGraph:
    graph_id = graph_id if graph_id is not None else Path(out).stem
    _log_effective('build_graph', {'maps': ','.join(str(p) for p in map_files), 'out': out, 'id': graph_id})
    maps = [read_feature_map(p) for p in map_files]
    graph = build_feature_graph(maps, graph_id=graph_id)
    try:
        afg_write(graph, out)
    except OSError as e:
        raise GraphError(f"cannot write {out}: {e.strerror}", {'path': str(out)})
    logger.info(f"wrote {out}: {graph.grid_w}x{graph.grid_h} grid, D={graph.dim}")
    return graph


def _manifest_splits(config: RunConfig, splits: Sequence[str]) -> List[List[FeatureGraph]]:
    if not config.data.manifest:
        raise ManifestError("data.manifest is required (set it or pass --manifest)")
    entries = read_manifest(config.data.manifest)
    return [load_split(config.data.manifest, split, entries) for split in splits]


def _fit_input_width(config: RunConfig, graphs: Sequence[FeatureGraph]):
    """Default model.d_in to the data width unless it was set explicitly."""
    dim = graphs[0].dim
    if config.model.d_in == dim:
        return config.model
    if 'model.d_in' in config.explicit_keys:
        raise ConfigError(f"model.d_in={config.model.d_in} but the data has D={dim}", {'key': 'model.d_in'})
    logger.info(f"model.d_in defaulted to data width {dim}")
    return config.model.replace(d_in=dim)


def cmd_train(config: RunConfig, resume: Optional[str] = None, out_dir: Optional[str] = None):
    from dataclasses import replace

    from gatiaa.services.checkpoint import load_checkpoint
    from gatiaa.services.training import TrainingService

    train_set, val_set = _manifest_splits(config, [config.data.train_split, config.data.val_split])
    cfg = replace(config.train, checkpoint_dir=out_dir) if out_dir else config.train
    if resume:
        checkpoint = load_checkpoint(resume)
        model = checkpoint.model
        if any(key.startswith('model.') for key in config.explicit_keys):
            logger.warning("model.* settings ignored: resuming with the checkpoint's model spec")
    else:
        checkpoint = None
        if not train_set:
            raise ManifestError(f"split {config.data.train_split!r} is empty")
        model = build_model(_fit_input_width(config, train_set), seed=cfg.seed)

    def report(record):
        print(f"epoch {record.epoch} lr={record.lr:.6e} train_loss={record.train_loss:.6f} "
              f"val_plcc={record.val_plcc:.4f} val_srcc={record.val_srcc:.4f}")

    service = TrainingService(model, cfg, config.workers, on_epoch=report)
    if checkpoint is not None:
        service.resume_from(checkpoint)
    return service.train(train_set, val_set)


def cmd_eval(config: RunConfig, checkpoint_path: Optional[str], out_dir: Optional[str] = None,
             oracle_replay: bool = False):
    from gatiaa.services.checkpoint import load_checkpoint
    from gatiaa.services.evaluation import evaluate, write_report_csv

    oracle_replay = oracle_replay or config.eval.oracle_replay
    (test_set,) = _manifest_splits(config, [config.data.test_split])
    model = None
    if not oracle_replay:
        if not checkpoint_path:
            raise ConfigError("eval needs --checkpoint unless --oracle-replay is given", {'key': 'checkpoint'})
        model = load_checkpoint(checkpoint_path).model
        if test_set and test_set[0].dim != model.spec.d_in:
            raise ConfigError(f"checkpoint expects D={model.spec.d_in}, test split has D={test_set[0].dim}",
                              {'key': 'model.d_in'})
    report = evaluate(model, test_set, tau=config.eval.tau, augmented=config.eval.augmented,
                      oracle_replay=oracle_replay, workers=config.workers,
                      batch_size=config.train.eval_batch_size)
    if out_dir:
        write_report_csv(report, Path(out_dir) / 'report.csv')
    print(f"plcc={report.plcc:.6f} srcc={report.srcc:.6f} acc={report.acc:.6f} "
          f"balanced_acc={report.balanced_acc:.6f} n={report.count}")
    return report


def _ablation_data(config: RunConfig) -> Tuple[List[FeatureGraph], List[FeatureGraph], List[FeatureGraph]]:
    if config.data.manifest:
        train_set, val_set, test_set = _manifest_splits(
            config, [config.data.train_split, config.data.val_split, config.data.test_split])
    else:
        graphs = synth_generate(config.data.synth_seed, config.data.synth_count, config.synth)
        split = {'train': [], 'val': [], 'test': []}
        for g in graphs:
            split[split_for_id(g.id)].append(g)
        train_set, val_set, test_set = split['train'], split['val'], split['test']
    for name, part in (('train', train_set), ('val', val_set), ('test', test_set)):
        if not part:
            raise ManifestError(f"ablation {name} split is empty")
    return train_set, val_set, test_set


def cmd_ablate(config: RunConfig, out_dir: Optional[str] = None):
    from gatiaa.services.ablation import default_seeds, run_ablation, write_ablation_csv

    train_set, val_set, test_set = _ablation_data(config)
    spec = _fit_input_width(config, train_set)
    result = run_ablation(spec, config.train, train_set, val_set, test_set,
                          seeds=default_seeds(config.train.seed, config.eval.seeds),
                          tau=config.eval.tau, confusion=config.eval.confusion, workers=config.workers)
    if out_dir:
        write_ablation_csv(result, out_dir)
    print('variant,plcc,srcc')
    for row in result.table():
        print(f"{row['variant']},{row['plcc']:.6f},{row['srcc']:.6f}")
    return result


def cmd_gradcheck(seed: int = 0, corrupt: Optional[str] = None, units: Optional[List[str]] = None) -> bool:
    from gatiaa.services.verification import STEP, TOLERANCE, run_gradcheck_suite

    _log_effective('gradcheck', {'seed': seed, 'corrupt': corrupt or '', 'units': ','.join(units or []) or 'all',
                                 'tolerance': TOLERANCE, 'step': STEP})
    results = run_gradcheck_suite(seed=seed, corrupt=corrupt, units=units)
    for r in results:
        print(f"{r.name:<18} max_rel_error={r.max_rel_error:.3e} "
              f"kinks={r.kinks} {'PASS' if r.passed else 'FAIL'} ({r.seconds:.2f}s)")
    passed = all(r.passed for r in results)
    print(f"gradcheck {'passed' if passed else 'FAILED'} (tolerance {TOLERANCE:g})")
    return passed


# ---------------------------------------------------------------- dispatcher

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INPUT

    try:
        env = load_env()
        configure_logging(env.log_level)
        if args.command == 'gradcheck':
            return EXIT_OK if cmd_gradcheck(args.seed, args.corrupt, args.unit) else EXIT_VERIFICATION
        if args.command == 'build-graph':
            cmd_build_graph(args.maps, args.out, args.id)
            return EXIT_OK

        config = _run_config(args, env)
        if args.command == 'synth':
            cmd_synth(config, args.out or '.', args.count)
        elif args.command == 'train':
            cmd_train(config, args.resume, args.out)
        elif args.command == 'eval':
            cmd_eval(config, args.checkpoint, args.out, args.oracle_replay)
        elif args.command == 'ablate':
            cmd_ablate(config, args.out)
        return EXIT_OK
    except GatiaaError as e:
        logger.error(f"{args.command} failed: {e.to_dict()}")
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == '__main__':
    sys.exit(main())
