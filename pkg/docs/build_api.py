"""Writes the reStructuredText sources for the API reference and the command reference.

Run from the repository root before ``sphinx-build``::

    python docs/build_api.py

"""
import inspect
import os
import sys
from argparse import ArgumentParser
from pathlib import Path
from typing import List

DOCS_PATH = Path(os.path.dirname(os.path.realpath(__file__)))
ROOT_PATH = DOCS_PATH.parent

sys.path = [str(ROOT_PATH)] + sys.path

import flonav  # noqa: E402
from flonav.plugins import COMMANDS, run_options  # noqa: E402


def heading(text: str, underline: str) -> str:
    return f"{text}\n{underline * len(text)}\n"


def public_members(module, predicate) -> List:
    return sorted(
        (
            obj
            for name, obj in inspect.getmembers(module, predicate)
            if getattr(obj, "__module__", None) == module.__name__ and not name.startswith("_")
        ),
        key=lambda obj: obj.__name__,
    )


def module_page(module) -> str:
    shortname = module.__name__.split(".")[-1]
    parts = [heading(module.__name__, "="), f"\n.. automodule:: {module.__name__}\n"]
    classes = public_members(module, inspect.isclass)
    if classes:
        parts.append("\n" + heading(f"{shortname} classes", "-"))
        for cls in classes:
            parts.append(
                f"\n{heading(cls.__name__, '*')}\n.. autoclass:: {cls.__name__}\n"
                "   :members:\n   :undoc-members:\n   :show-inheritance:\n"
            )
    functions = public_members(module, inspect.isfunction)
    if functions:
        parts.append("\n" + heading(f"{shortname} functions", "-"))
        for func in functions:
            parts.append(f"\n{heading(func.__name__, '*')}\n.. autofunction:: {func.__name__}\n")
    return "".join(parts)


def commands_page() -> str:
    """One section per registered subcommand with its ``--help`` text."""
    parts = [heading("Command line", "="), "\nEvery command also accepts the shared run options below.\n"]
    shared = run_options()
    shared.prog = "flonav <command>"
    parts.append("\n" + heading("run options", "-") + "\n.. code-block:: text\n\n")
    parts.extend(f"   {line}\n" for line in shared.format_help().splitlines())
    for name in sorted(COMMANDS):
        command_type = COMMANDS[name]
        parser = ArgumentParser(prog=f"flonav {name}", description=command_type.help)
        command_type(parser)
        parts.append("\n" + heading(name, "-") + f"\n{command_type.help}\n\n.. code-block:: text\n\n")
        parts.extend(f"   {line}\n" for line in parser.format_help().splitlines())
    return "".join(parts)


MODULES = [flonav] + sorted(
    (
        obj
        for _, obj in inspect.getmembers(flonav, inspect.ismodule)
        if obj.__name__.startswith("flonav.") and obj.__name__ != "flonav.__main__"
    ),
    key=lambda m: m.__name__,
)

for m in MODULES:
    (DOCS_PATH / f"{m.__name__}.rst").write_text(module_page(m))

(DOCS_PATH / "commands.rst").write_text(commands_page())

(DOCS_PATH / "package.rst").write_text(
    heading("flonav API", "-") + "\n.. toctree::\n   :maxdepth: 4\n\n" + "\n".join(f"   {m.__name__}" for m in MODULES)
)
