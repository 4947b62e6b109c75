"""Base classes for flonav command line commands.

Examples:

    Every pipeline stage is exposed as a subcommand of the ``flonav`` executable. To add one, extend
    :class:`Command` anywhere inside the ``flonav`` package::

        class Foo(Command):
            name = "foo"
            help = "This is the foo command!"

            def __init_arguments__(self, parser: ArgumentParser):
                parser.add_argument("--bar", type=str, help="baz")

            def run(self, args: Namespace) -> int:
                config = self.run_config(args)
                print(f"Inside foo with seed {config.seed}")
                return 0

    Simply extending :class:`Command` registers it; ``flonav foo --help`` then lists the shared run options
    (``--config``, ``--seed``, ``--workers``, ``--output`` and one flag per configuration field) next to
    the command's own arguments.

"""

import sys
from abc import ABC, ABCMeta, abstractmethod
from argparse import ArgumentParser, Namespace
from inspect import isabstract
from pathlib import Path
from typing import Dict, NoReturn, Optional, Tuple, Type

from .config import RunConfig, add_config_arguments, config_from_args

PLUGINS: Dict[str, Type["Plugin"]] = {}
"""A global dictionary mapping plugin names to their types."""
COMMANDS: Dict[str, Type["Command"]] = {}
"""A global dictionary mapping commands to their types."""


class FlonavArgumentParser(ArgumentParser):
    """An argument parser that exits with status 1 on usage errors.

    Exit status 2 is reserved for data errors (see :class:`flonav.errors.FlonavError`).

    """

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


class PluginMeta(ABCMeta):
    """Metaclass for flonav plugins."""

    def __init__(cls, name, bases, clsdict):
        super().__init__(name, bases, clsdict)
        if not isabstract(cls) and name not in ("Plugin", "Command"):
            if "name" not in clsdict:
                raise TypeError(f"flonav plugin {name} does not define a name")
            plugin_name = clsdict["name"]
            if plugin_name in PLUGINS:
                raise TypeError(
                    f"Cannot instantiate class {cls.__name__} because a plugin named {plugin_name} already exists,"
                    f" implemented by class {PLUGINS[plugin_name]}"
                )
            PLUGINS[plugin_name] = cls
            if issubclass(cls, Command):
                if "help" not in clsdict:
                    raise TypeError(f"flonav command {name} does not define a help string")
                COMMANDS[plugin_name] = cls


class Plugin(ABC, metaclass=PluginMeta):
    """Abstract base class for all flonav plugins.

    At a minimum, a plugin must define a unique :attr:`name` class member.

    """

    name: str
    """The name of this plugin."""


def run_options() -> ArgumentParser:
    """Builds the parent parser holding the options every command shares."""
    parser = ArgumentParser(add_help=False)
    group = parser.add_argument_group("run options")
    group.add_argument("--config", type=Path, default=None, help="INI run configuration to start from")
    group.add_argument("--seed", type=int, default=None, help="master seed; every random stream derives from it")
    group.add_argument(
        "--workers", type=int, default=None, help="episode-level worker processes (1 is the determinism reference)"
    )
    group.add_argument(
        "--output", "-o", type=Path, default=Path("."), help="output root holding scenes/, datasets/, ... (default: .)"
    )
    add_config_arguments(parser)
    return parser


class Command(Plugin, ABC):
    """A flonav command, exposed as a command line subcommand."""

    help: str
    """Help string for this command."""
    parent_parsers: Tuple[ArgumentParser, ...] = ()
    """Parent argument parsers from which to parse options; :func:`add_command_subparsers` adds the shared run
    options to every command."""

    def __init__(self, argument_parser: ArgumentParser):
        self.__init_arguments__(argument_parser)

    def __init_arguments__(self, parser: ArgumentParser):
        """Initializes this command's argument parser.

        Subclasses should extend this function and add any necessary options to ``parser``.

        """
        pass

    def run_config(self, args: Namespace) -> RunConfig:
        """Builds the effective configuration (defaults, then ``--config``, then flags) and echoes it."""
        config = config_from_args(args)
        output: Optional[Path] = getattr(args, "output", None)
        if output is not None:
            output.mkdir(parents=True, exist_ok=True)
            config.dump(output / f"{self.name}.config.ini")
        return config

    @abstractmethod
    def run(self, args: Namespace) -> int:
        """Callback for when the command is run.

        Args:
            args: The result of parsing the commandline arguments set up by :meth:`Command.__init_arguments__`.

        Returns:
            The process exit status.

        """
        raise NotImplementedError()


def add_command_subparsers(parser: ArgumentParser):
    """Adds subparsers for all flonav commands"""
    subparsers = parser.add_subparsers(
        title="command",
        description="valid flonav commands",
        help="run `flonav command --help` for help on a specific command",
    )
    shared = run_options()
    for name, command_type in COMMANDS.items():
        p = subparsers.add_parser(name, parents=(shared, *command_type.parent_parsers), help=command_type.help)
        p.set_defaults(func=command_type(p).run)
    return subparsers
