"""
Parameter overhead of TexMod, StructD and FreD over the plain generator + discriminator.
"""
import argparse
from typing import List

import numpy as np

from sdtm.commands.common import add_run_options, config_from_args
from sdtm.config import RunConfig
from sdtm.errors import EXIT_OK
from sdtm.frequency import FreDNet
from sdtm.models import DiscriminatorNet, GeneratorNet
from sdtm.schemas import CostRow
from sdtm.structural import StructDNet


def parameter_costs(config: RunConfig, n_classes: int, channels: int = 3) -> List[CostRow]:
    rng = np.random.default_rng(config.seed)
    gen = GeneratorNet(channels, rng, width=config.width)
    disc = DiscriminatorNet(channels, n_classes, rng, width=config.width, tap_layer=config.tap_layer)
    structd = StructDNet(channels, rng, width=config.structd_width)
    fred = FreDNet(3 * disc.tap_channels, rng, width=config.fred_width)

    texmod = gen.texmod.num_parameters()
    baseline = gen.num_parameters() - texmod + disc.num_parameters()
    rows = [
        CostRow(component="generator", parameters=gen.num_parameters() - texmod),
        CostRow(component="discriminator", parameters=disc.num_parameters()),
        CostRow(component="baseline", parameters=baseline),
    ]
    for name, count in (("texmod", texmod), ("structd", structd.num_parameters()), ("fred", fred.num_parameters())):
        rows.append(CostRow(component=name, parameters=count, overhead_pct=100.0 * count / baseline))
    return rows


def cmd_cost(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    for row in parameter_costs(config, args.classes, args.channels):
        print(row.to_line())
    return EXIT_OK


def register(subparsers) -> None:
    parser = subparsers.add_parser("cost", help="Parameter counts and module overheads")
    add_run_options(parser)
    parser.add_argument("--classes", type=int, default=3, help="Seen categories for the class head")
    parser.add_argument("--channels", type=int, default=3)
    parser.set_defaults(handler=cmd_cost)
