"""
Copyright (C) 2024 The mrfrecon authors
This project uses an MIT style license - see README.md for details.

Runs the MRF reconstruction experiments - see the README.md file for details.
"""
# I M P O R T S ###############################################################

import argparse
import logging
import sys

from mrfrecon.config import apply_overrides, load_config
from mrfrecon.experiment import COMMANDS, EXIT_SUCCESS, exit_code, run_command
from mrfrecon.exceptions import ReconstructionError
from mrfrecon.reconstruct import MODES

# F U N C T I O N S ###########################################################


def parse_arguments(argv=None):
    """
    Parses the command-line arguments passed to the experiment runner.
    """
    parser = argparse.ArgumentParser(
        description="Simulate, pretrain, reconstruct and evaluate "
        "MR fingerprinting experiments. See README.md for more "
        "information."
    )
    parser.add_argument("command", choices=COMMANDS, help="the stage to run")
    parser.add_argument(
        "--config", metavar="FILE", help="the TOML experiment configuration")
    parser.add_argument(
        "--mode", choices=MODES, help="the reconstruction method")
    parser.add_argument(
        "--iterations", type=int, metavar="N", help="overrides recon.iterations")
    parser.add_argument(
        "--snr", type=float, metavar="DB", help="run a single SNR instead of the configured list")
    parser.add_argument(
        "--seed", type=int, help="overrides the root seed")
    parser.add_argument(
        "--jobs", type=int, default=1, metavar="N",
        help="reconstruct up to N slices and SNRs in parallel processes")
    parser.add_argument(
        "--out", metavar="DIR", help="overrides the output directory")
    parser.add_argument(
        "--verbose", action="store_true", help="log debug messages and show progress bars")
    return parser.parse_args(argv)


def main(args):
    """
    Runs one stage with the specified arguments.

    :param args: the parsed arguments
    :return: the process exit code
    """
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = apply_overrides(
            load_config(args.config), mode=args.mode, iterations=args.iterations,
            snr=args.snr, seed=args.seed, out=args.out, progress=args.verbose or None,
        )
        run_command(args.command, config, args.mode, max(args.jobs, 1))
    except ReconstructionError as error:
        print("error: {}".format(error.value), file=sys.stderr)
        return exit_code(error)
    except OSError as error:
        print("error: {}".format(error), file=sys.stderr)
        return exit_code(error)
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main(parse_arguments()))

# E N D   O F   F I L E #######################################################
