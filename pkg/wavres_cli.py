#!/usr/bin/env python3
"""
WavRes - batch command line for the low-dose CT denoising toolkit

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from colorama import Fore, Style, init
from dotenv import load_dotenv

from wavres.config import load_config
from wavres.core_image import load_image, save_image
from wavres.ct_sim import (
    fbp_reconstruct,
    forward_project,
    from_hu,
    inject_low_dose_noise,
    load_sinogram,
    random_phantom,
    rasterize_phantom,
    relative_to_hu,
    save_sinogram,
    shepp_logan,
    to_hu,
)
from wavres.dataset import load_manifest, synth_dataset
from wavres.errors import ConfigError, UsageError, WavResError
from wavres.evaluation import compare_methods
from wavres.mbir import admm_tv_reconstruct, save_objective_log, tune_lambda
from wavres.metrics import evaluate_dataset
from wavres.nsct import CoeffStack, nsct_forward, nsct_inverse, roundtrip_error
from wavres.reports import ReportGenerator
from wavres.training import denoise, load_denoiser, train

load_dotenv()
init(autoreset=True)

logger = logging.getLogger("wavres")


class WavResArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, os.getenv("WAVRES_LOG_LEVEL", "INFO").upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.getenv("WAVRES_LOG_FILE", "wavres.log")),
            logging.StreamHandler()
        ]
    )
    logging.getLogger().setLevel(level)


def build_parser() -> WavResArgumentParser:
    common = WavResArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value config file (default: $WAVRES_CONFIG or built-in defaults)')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='override one config key; may be repeated')
    common.add_argument('-v', '--verbose', action='store_true', help='debug logging')

    parser = WavResArgumentParser(
        prog="wavres_cli.py",
        description="WavRes - low-dose CT denoising in the contourlet domain",
    )
    sub = parser.add_subparsers(dest="command", parser_class=WavResArgumentParser)

    p = sub.add_parser('phantom', parents=[common], help='rasterize a phantom (HU)')
    p.add_argument('output')
    p.add_argument('--kind', choices=['shepp-logan', 'random'], help='default: sim.phantom')
    p.add_argument('--seed', type=int, help='random phantom seed (default: sim.seed)')

    p = sub.add_parser('project', parents=[common], help='forward-project an HU image')
    p.add_argument('image')
    p.add_argument('output')

    p = sub.add_parser('noise', parents=[common], help='inject low-dose noise into a sinogram')
    p.add_argument('sinogram')
    p.add_argument('output')
    p.add_argument('--i0', type=float, help='incident photons (default: sim.i0_routine * sim.dose_fraction)')
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('fbp', parents=[common], help='filtered backprojection to HU')
    p.add_argument('sinogram')
    p.add_argument('output')

    p = sub.add_parser('nsct', parents=[common], help='contourlet decomposition')
    p.add_argument('input')
    p.add_argument('output', nargs='?')
    p.add_argument('--roundtrip', action='store_true', help='print the reconstruction error and exit')
    p.add_argument('--inverse', action='store_true', help='input is a coefficient stack; write the image')

    p = sub.add_parser('mbir', parents=[common], help='MBIR-TV reconstruction to HU')
    p.add_argument('sinogram')
    p.add_argument('output', nargs='?')
    p.add_argument('--log', help='objective CSV (iteration,data_term,tv_term,total)')
    p.add_argument('--tune', action='store_true', help='grid-search mbir.lambda_grid against --reference')
    p.add_argument('--reference', help='HU reference image for --tune')

    p = sub.add_parser('synth', parents=[common], help='synthesize a routine/quarter-dose dataset')
    p.add_argument('--out', default='dataset')
    p.add_argument('--n', type=int, help='number of phantoms (default: sim.n_phantoms)')
    p.add_argument('--seed', type=int, help='master seed (default: sim.seed)')

    p = sub.add_parser('train', parents=[common], help='train a denoising network')
    p.add_argument('--data', required=True, help='dataset directory or manifest')
    p.add_argument('--out', default='run')

    p = sub.add_parser('denoise', parents=[common], help='denoise an HU image with a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('input')
    p.add_argument('output')

    p = sub.add_parser('eval', parents=[common], help='PSNR/NRMSE/SSIM of images against a reference')
    p.add_argument('--reference', required=True)
    p.add_argument('images', nargs='+')
    p.add_argument('--csv', help='write the metric table here')

    p = sub.add_parser('compare', parents=[common], help='compare noisy input, MBIR-TV and networks')
    p.add_argument('--data', required=True, help='dataset directory or manifest')
    p.add_argument('--residual', help='residual-mode checkpoint')
    p.add_argument('--direct', help='direct-mode checkpoint')
    p.add_argument('--no-mbir', action='store_true')
    p.add_argument('--out', default='compare')
    return parser


def _require_output(args) -> Path:
    if not args.output:
        raise UsageError(f"{args.command}: an output path is required")
    return Path(args.output)


def cmd_phantom(args, config) -> int:
    sim = config.sim_config()
    size = config.get_int("sim.image_size")
    kind = args.kind or sim.phantom
    if kind == "shepp-logan":
        phantom = shepp_logan()
    else:
        phantom = random_phantom(np.random.default_rng(sim.seed if args.seed is None else args.seed))
    save_image(args.output, relative_to_hu(rasterize_phantom(phantom, size)))
    logger.info(f"{kind} phantom ({size}x{size}) written to {args.output}")
    return 0


def cmd_project(args, config) -> int:
    sim = config.sim_config()
    sino = forward_project(from_hu(load_image(args.image), sim), config.geometry())
    save_sinogram(args.output, sino, {"source": Path(args.image).name})
    return 0


def cmd_noise(args, config) -> int:
    sim = config.sim_config()
    i0 = args.i0 if args.i0 is not None else sim.i0_routine * sim.dose_fraction
    noisy = inject_low_dose_noise(load_sinogram(args.sinogram), i0, args.seed)
    save_sinogram(args.output, noisy, {"i0": repr(float(i0)), "seed": args.seed})
    return 0


def cmd_fbp(args, config) -> int:
    sim = config.sim_config()
    image = fbp_reconstruct(load_sinogram(args.sinogram), sim.filter)
    save_image(args.output, to_hu(image, sim))
    return 0


def cmd_nsct(args, config) -> int:
    spec = config.decomposition()
    if args.roundtrip:
        error = roundtrip_error(load_image(args.input), spec)
        print(f"relative reconstruction error: {error:.3e}")
        return 0
    output = _require_output(args)
    if args.inverse:
        save_image(output, nsct_inverse(CoeffStack.load(args.input)))
    else:
        nsct_forward(load_image(args.input), spec).save(output)
    return 0


def cmd_mbir(args, config) -> int:
    sim = config.sim_config()
    sino = load_sinogram(args.sinogram)
    params = config.tv_params()
    if args.tune:
        if not args.reference:
            raise UsageError("mbir --tune needs --reference")
        reference = from_hu(load_image(args.reference), sim)
        best, table = tune_lambda(sino, reference, params, config.lambda_grid())
        print(table.to_string(index=False))
        print(f"{Fore.GREEN}best lambda: {best:g}{Style.RESET_ALL}")
        return 0
    output = _require_output(args)
    image, log = admm_tv_reconstruct(sino, params=params)
    save_image(output, to_hu(image, sim))
    if args.log:
        save_objective_log(args.log, log)
    logger.info(f"MBIR-TV finished after {len(log)} iterations, objective {log[-1].total:.6g}")
    return 0


def cmd_synth(args, config) -> int:
    sim = config.sim_config()
    geometry = config.geometry()
    manifest = synth_dataset(
        args.n or sim.n_phantoms, geometry.image_size, geometry,
        seed=sim.seed if args.seed is None else args.seed, out_dir=args.out, sim=sim,
    )
    print(f"{Fore.GREEN}✓ {len(manifest)} pairs written to {manifest.path}{Style.RESET_ALL}")
    return 0


def cmd_train(args, config) -> int:
    manifest = load_manifest(args.data).validate()
    result = train(config.training(), manifest, args.out)
    print(f"{Fore.GREEN}✓ Training finished{Style.RESET_ALL}")
    print(f"  - {result.final_checkpoint}")
    print(f"  - {result.best_checkpoint}")
    print(f"  - {result.convergence_csv}")
    return 0


def cmd_denoise(args, config) -> int:
    network, settings = load_denoiser(args.checkpoint, config.training())
    save_image(args.output, denoise(load_image(args.input), network, settings))
    return 0


def cmd_eval(args, config) -> int:
    settings = config.eval_config()
    reference = load_image(args.reference)
    pairs = [(load_image(path), reference) for path in args.images]
    peak = settings.peak or float(reference.max() - reference.min())
    dynamic_range = settings.dynamic_range or peak
    report = evaluate_dataset(pairs, peak=peak, dynamic_range=dynamic_range, method="eval",
                              slice_ids=[Path(p).name for p in args.images])
    print(report.to_table())
    if args.csv:
        report.to_csv(args.csv)
    return 0


def cmd_compare(args, config) -> int:
    manifest = load_manifest(args.data).validate()
    training = config.training()
    _, validation_idx = training.split(len(manifest))
    if not validation_idx:
        raise ConfigError("train.validation_slices selects no slices to compare on")
    checkpoints = {name: path for name, path in (("direct", args.direct), ("residual", args.residual)) if path}
    report = compare_methods(
        manifest.subset(validation_idx), checkpoints,
        tv_params=config.tv_params(), sim=config.sim_config(), settings=config.eval_config(),
        out_dir=args.out, training=training, include_mbir=not args.no_mbir,
    )
    ReportGenerator(args.out).print_summary(report)
    return 0


HANDLERS = {
    "phantom": cmd_phantom,
    "project": cmd_project,
    "noise": cmd_noise,
    "fbp": cmd_fbp,
    "nsct": cmd_nsct,
    "mbir": cmd_mbir,
    "synth": cmd_synth,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and return its exit code"""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage()
        return UsageError.exit_code
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage()
            return UsageError.exit_code
        configure_logging(args.verbose)
        config = load_config(args.config, args.set)
        return HANDLERS[args.command](args, config)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except WavResError as e:
        if isinstance(e, UsageError):
            parser.print_usage(sys.stderr)
        logger.error(f"{type(e).__name__}: {e}")
        print(f"{Fore.RED}✗ {e}{Style.RESET_ALL}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O failure: {e}", exc_info=True)
        print(f"{Fore.RED}✗ {e}{Style.RESET_ALL}", file=sys.stderr)
        return 2


def main():
    """Main entry point"""
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
