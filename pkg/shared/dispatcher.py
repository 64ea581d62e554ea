import argparse
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch

from .config import NUM_THREADS, ExperimentConfig, load_experiment_config, logger
from .exceptions import ConfigError, ElmmError
from .funcs import config_hash

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


@dataclass
class RunContext:
    config: ExperimentConfig
    root: Path
    args: argparse.Namespace

    def path(self, key: str) -> Path:
        return self.config.resolve(self.root, getattr(self.config.paths, key))

    @property
    def reports_dir(self) -> Path:
        return self.path('reports_dir')

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[[RunContext], int | None]
    arguments: list[tuple[tuple, dict]] = field(default_factory=list)


# Набір обробників команд; Dispatcher збирає роутери в один CLI
class Router:

    def __init__(self, name: str | None = None):
        self.name = name
        self.commands: dict[str, Command] = {}

    def command(self, name: str, help: str = '', arguments: list[tuple[tuple, dict]] | None = None):
        def decorator(handler):
            self.commands[name] = Command(name, help, handler, list(arguments or []))
            return handler
        return decorator


class Dispatcher:

    def __init__(self):
        self.commands: dict[str, Command] = {}

    def include_routers(self, *routers: Router) -> None:
        for router in routers:
            for name, command in router.commands.items():
                if name in self.commands:
                    raise ValueError(f"command '{name}' registered twice")
                self.commands[name] = command

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog='elmm', description='Desk-scale multimodal KG completion experiments')
        subparsers = parser.add_subparsers(dest='command', required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.help)
            sub.add_argument('--config', type=Path, default=None, help='experiment JSON config')
            sub.add_argument('--seed', type=int, default=None, help='seed for generation and training')
            sub.add_argument('--out', type=Path, default=Path('.'), help='root directory for artifacts')
            sub.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                             help='dotted-path override, e.g. train.lr=3e-4')
            for args, kwargs in command.arguments:
                sub.add_argument(*args, **kwargs)
        return parser

    def run(self, argv: list[str] | None = None) -> int:
        args = self.build_parser().parse_args(argv)
        try:
            config = load_experiment_config(args.config, args.overrides, args.seed)
        except ConfigError as e:
            logger.error(f"Помилка конфігурації у '{e.key_path}': {e.message}")
            return EXIT_CONFIG

        if NUM_THREADS > 0:
            torch.set_num_threads(NUM_THREADS)
        torch.use_deterministic_algorithms(True)

        context = RunContext(config, args.out, args)
        try:
            code = self.commands[args.command].handler(context)
        except ConfigError as e:
            logger.error(f"Помилка конфігурації у '{e.key_path}': {e.message}")
            return EXIT_CONFIG
        except ElmmError as e:
            logger.error(f"Команда {args.command} завершилась з помилкою: {e}")
            return EXIT_RUNTIME
        except Exception as e:
            logger.exception(f"Неочікувана помилка в команді {args.command}: {e}")
            return EXIT_RUNTIME
        return EXIT_OK if code is None else code
