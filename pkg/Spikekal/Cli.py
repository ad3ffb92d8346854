"""
spikekal command line.

    spikekal simulate   --scenario lorenz --seed 1 --out runs/sim
    spikekal run        --method spikekal --teacher-steps 500 --out runs/one
    spikekal compare    --scenario linear_motion --seed 7 --out runs/cmp
    spikekal compare    --seeds 1,2,3 --out runs/batch
    spikekal checkpoint --scenario linear_motion --out runs/ckpt
    spikekal checkpoint --load runs/ckpt/checkpoint.json

Exit codes: 0 success, 2 usage or configuration error, 3 runtime fault
(reports written before the fault are kept).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from Spikekal.Config import RunManifest, load_config, load_manifest, write_manifest
from Spikekal.Errors import (ConfigError, ContractViolation, CsvFormatError, ModelValidationError,
                             NumericalError, SpikekalError)
from Spikekal.Evaluation import (METHODS, ComparisonResult, run_batch, run_comparison, summarize_batch,
                                 write_report_json, write_trace_csv)
from Spikekal.Filters import riccati_gain
from Spikekal.HybridFilter import SpikeKalConfig, run_spikekal
from Spikekal.Scenarios import SCENARIOS, ScenarioConfig, build_scenario, synthesize_uav_csv
from Spikekal.snn.Checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from Spikekal.snn.Network import neuron_count


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

REPORT_NAME = 'report.json'
TRACE_NAME = 'trace.csv'
SUMMARY_NAME = 'summary.json'
TRAJECTORY_NAME = 'trajectory.csv'
CHECKPOINT_NAME = 'checkpoint.json'


class RuntimeFault(SpikekalError):
    pass


def _seed(value: str) -> int:
    try:
        seed = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed '{value}'") from None
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def _seed_list(value: str) -> list[int]:
    return [_seed(part.strip()) for part in value.split(',') if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', metavar='PATH', help="TOML configuration file")
    common.add_argument('--scenario', choices=SCENARIOS, help="benchmark scenario (default linear_motion)")
    common.add_argument('--seed', type=_seed, help="u64 master seed for noise and weight initialisation")
    common.add_argument('--out', metavar='DIR', default='.', help="output directory (default: current directory)")
    common.add_argument('--teacher-steps', type=int, metavar='N', help="length of the teacher phase")
    common.add_argument('--csv', metavar='PATH', help="UAV capture CSV for the uav_csv scenario")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    verbosity.add_argument('-q', '--quiet', action='store_true', help="warnings and errors only")

    parser = argparse.ArgumentParser(prog='spikekal',
                                     description="Kalman filtering with a spiking-network gain.")
    commands = parser.add_subparsers(dest='command', metavar='COMMAND', required=True)

    commands.add_parser('simulate', parents=[common], help="write a trajectory CSV for a scenario")

    run = commands.add_parser('run', parents=[common], help="run a single method on a scenario")
    run.add_argument('--method', choices=METHODS, help="estimator (default spikekal)")
    run.add_argument('--matched', action='store_true', help="give kf/ekf the true Q and R_obs")
    run.add_argument('--checkpoint', metavar='PATH', help="warm-start the SNN from a checkpoint file")
    run.add_argument('--timing', action='store_true', help="record wall-clock time in the report")

    compare = commands.add_parser('compare', parents=[common], help="compare all methods on a scenario")
    compare.add_argument('--method', choices=METHODS, action='append',
                         help="restrict the comparison (repeatable; default: four methods)")
    compare.add_argument('--seeds', type=_seed_list, metavar='S1,S2,...', help="one comparison per seed")
    compare.add_argument('--timing', action='store_true', help="record wall-clock time in the report")

    checkpoint = commands.add_parser('checkpoint', parents=[common],
                                     help="train the SNN through its teacher phase and save it, or inspect a file")
    checkpoint.add_argument('--load', metavar='PATH', help="inspect an existing checkpoint instead of training")
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')


def resolve_configs(args) -> tuple[ScenarioConfig, SpikeKalConfig]:
    if args.config and args.config.endswith('.json'):
        # 重放: manifest 携带完整配置
        manifest = load_manifest(args.config)
        scenario, spikekal = manifest.scenario, manifest.spikekal
        if args.scenario is not None and args.scenario != scenario.name:
            raise ConfigError("--scenario conflicts with the manifest", key='scenario')
        if args.seed is not None:
            scenario = replace(scenario, seed=args.seed)
        if args.teacher_steps is not None:
            spikekal = replace(spikekal, teacher_steps=args.teacher_steps)
        _restore_run_options(args, manifest)
    elif args.config:
        scenario, spikekal = load_config(args.config, args.scenario, args.seed, args.teacher_steps)
    else:
        overrides = {} if args.seed is None else {'seed': args.seed}
        scenario = ScenarioConfig.default(args.scenario or 'linear_motion', **overrides)
        spikekal = SpikeKalConfig() if args.teacher_steps is None else SpikeKalConfig(teacher_steps=args.teacher_steps)
    if args.csv:
        scenario = replace(scenario, csv_path=args.csv)
    return scenario, spikekal


def _restore_run_options(args, manifest: RunManifest):
    """Method selection, seeds and checkpoint of a replayed manifest; explicit flags win."""
    if manifest.command != args.command:
        return
    if args.command == 'run':
        if args.method is None and manifest.methods:
            args.method = manifest.methods[0]
        args.matched = args.matched or manifest.matched
        if args.checkpoint is None:
            args.checkpoint = manifest.checkpoint
    elif args.command == 'compare':
        if args.method is None:
            args.method = manifest.methods
        if args.seeds is None:
            args.seeds = manifest.seeds


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_comparison(result: ComparisonResult, out: Path, timing: bool, extra: Optional[dict] = None):
    write_report_json(result, out / REPORT_NAME, timing, extra)
    write_trace_csv(result, out / TRACE_NAME)


def _failures(result: ComparisonResult) -> list[str]:
    return [f"{r.method}: {r.error}" for r in result.reports if r.error]


def cmd_simulate(args) -> int:
    scenario_config, spikekal_config = resolve_configs(args)
    out = _out_dir(args)
    write_manifest(RunManifest('simulate', scenario_config, spikekal_config, args.config, str(out)), out)
    if scenario_config.name == 'uav_csv':
        synthesize_uav_csv(out / TRAJECTORY_NAME, scenario_config)
    else:
        build_scenario(scenario_config).trajectory.to_csv(out / TRAJECTORY_NAME)
    logger.info("trajectory written to %s", out / TRAJECTORY_NAME)
    return EXIT_OK


def _riccati_report(scenario) -> Optional[list]:
    if scenario.model.kind != 'linear':
        return None
    try:
        return riccati_gain(scenario.model).tolist()
    except (NumericalError, np.linalg.LinAlgError, ValueError) as exc:
        logger.warning("steady-state gain unavailable: %s", exc)
        return None


def cmd_run(args) -> int:
    scenario_config, spikekal_config = resolve_configs(args)
    args.method = args.method or 'spikekal'
    out = _out_dir(args)
    write_manifest(RunManifest('run', scenario_config, spikekal_config, args.config, str(out),
                               methods=[args.method], matched=args.matched, checkpoint=args.checkpoint), out)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    scenario = build_scenario(scenario_config)
    result = run_comparison(scenario, [args.method], spikekal_config, checkpoint=checkpoint, matched=args.matched)
    _write_comparison(result, out, args.timing, {'riccati_gain': _riccati_report(scenario)})
    failures = _failures(result)
    if failures:
        raise RuntimeFault('; '.join(failures))
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario_config, spikekal_config = resolve_configs(args)
    out = _out_dir(args)
    write_manifest(RunManifest('compare', scenario_config, spikekal_config, args.config, str(out),
                               methods=args.method, seeds=args.seeds), out)
    if not args.seeds:
        result = run_comparison(build_scenario(scenario_config), args.method, spikekal_config)
        _write_comparison(result, out, args.timing)
        failures = _failures(result)
    else:
        results = run_batch(scenario_config, args.seeds, args.method, spikekal_config)
        failures = []
        for result in results:
            seed_dir = out / f"seed_{result.scenario.config.seed}"
            seed_dir.mkdir(exist_ok=True)
            _write_comparison(result, seed_dir, args.timing)
            failures += [f"seed {result.scenario.config.seed} {f}" for f in _failures(result)]
        (out / SUMMARY_NAME).write_text(json.dumps(summarize_batch(results), indent=2) + '\n')
        logger.info("summary written to %s", out / SUMMARY_NAME)
    if failures:
        raise RuntimeFault('; '.join(failures))
    return EXIT_OK


def cmd_checkpoint(args) -> int:
    scenario_config, spikekal_config = resolve_configs(args)
    if args.load:
        checkpoint = load_checkpoint(args.load)
        print(json.dumps({'n_in': checkpoint.n_in, 'n_out': checkpoint.n_out,
                          'neurons': checkpoint.n_in + checkpoint.n_out,
                          'tau': {**checkpoint.tau, 'tau_dec': checkpoint.tau_dec},
                          'weight_range': [float(checkpoint.W.min()), float(checkpoint.W.max())]}, indent=2))
        return EXIT_OK
    out = _out_dir(args)
    write_manifest(RunManifest('checkpoint', scenario_config, spikekal_config, args.config, str(out)), out)
    scenario = build_scenario(scenario_config)
    steps = min(spikekal_config.teacher_steps, len(scenario.trajectory))
    teacher_only = replace(scenario.trajectory, truth=scenario.trajectory.truth[:steps],
                           observations=scenario.trajectory.observations[:steps])
    run = run_spikekal(scenario.model, teacher_only, spikekal_config, scenario_config.seed)
    save_checkpoint(Checkpoint.from_network(run.final_state.net), out / CHECKPOINT_NAME)
    logger.info("trained %d neurons over %d teacher steps",
                neuron_count(scenario.model.n, scenario.model.m), steps)
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'run': cmd_run,
    'compare': cmd_compare,
    'checkpoint': cmd_checkpoint,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    _configure_logging(args)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CsvFormatError, ModelValidationError, ContractViolation) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except SpikekalError as exc:
        logger.error("run failed: %s", exc)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())
