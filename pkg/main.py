"""
ironkit command line: solve instance files, shipped fixtures and batches.
"""

import sys
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import click
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from src.utils import settings
from src.utils.json_helper import parse_json, render_json
from src.utils.logging_config import setup_logging
from workflow.core.errors import EXIT_SCHEMA, EXIT_USAGE, IronkitError
from workflow.graph import exit_code, output_text, process_batch, process_instance
from workflow.nodes.report import error_document

load_dotenv()

app = typer.Typer(name="ironkit", add_completion=False, no_args_is_help=True,
                  help="Multivariate majorization and multidimensional ironing.")
stderr = Console(stderr=True)


class Phi(str, Enum):
    quadratic = "quadratic"
    quartic = "quartic"


class Method(str, Enum):
    oracle = "oracle"
    flow = "flow"


TolOption = typer.Option(None, "--tol", help="Solver tolerance")
MaxSweepsOption = typer.Option(None, "--max-sweeps", help="Cap on coordinate-descent sweeps")
PhiOption = typer.Option(None, "--phi", help="Ironing objective")
MethodOption = typer.Option(None, "--method", help="Majorization check used by verification")
WithAccessOption = typer.Option(False, "--with-access", help="Goods mode: optimize access rights")
LevelOption = typer.Option(None, "--level", help="Dyadic level n")
SeedOption = typer.Option(None, "--seed", help="Seed for sampled checks")
CsvOption = typer.Option(None, "--csv", help="Write one row per profile to this CSV file")
QuietOption = typer.Option(False, "--quiet", help="Only warnings and errors on the console")
TimingsOption = typer.Option(False, "--timings", help="Include wall times in diagnostics")
OutputOption = typer.Option(None, "--output", "-o", help="Write the result document here instead of stdout")


def _overrides(tol, max_sweeps, phi, method, with_access, level, seed) -> Dict[str, Any]:
    return {
        "tol": tol,
        "max_sweeps": max_sweeps,
        "phi": phi.value if phi else None,
        "method": method.value if method else None,
        "with_access": True if with_access else None,
        "n": level,
        "seed": seed,
    }


def _emit(text: str, output: Optional[Path]) -> None:
    if output is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        output.write_text(text)


def _read_source(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    source = Path(path)
    if not source.is_file():
        raise click.UsageError(f"No such instance file: {path}")
    return source.read_bytes()


def _solve_one(text: bytes, source: str, overrides: Dict[str, Any], csv: Optional[Path],
               timings: bool, output: Optional[Path]) -> int:
    state = process_instance(text, source, overrides, str(csv) if csv else None, timings)
    _emit(output_text(state), output)
    return exit_code(state)


@app.command()
def solve(
    path: str = typer.Argument(..., help="Instance JSON file, or - for stdin"),
    tol: Optional[float] = TolOption,
    max_sweeps: Optional[int] = MaxSweepsOption,
    phi: Optional[Phi] = PhiOption,
    method: Optional[Method] = MethodOption,
    with_access: bool = WithAccessOption,
    level: Optional[int] = LevelOption,
    seed: Optional[int] = SeedOption,
    csv: Optional[Path] = CsvOption,
    quiet: bool = QuietOption,
    timings: bool = TimingsOption,
    output: Optional[Path] = OutputOption,
) -> int:
    """Solve one instance file."""
    setup_logging(quiet=quiet)
    text = _read_source(path)
    overrides = _overrides(tol, max_sweeps, phi, method, with_access, level, seed)
    return _solve_one(text, path, overrides, csv, timings, output)


@app.command()
def fixture(
    name: str = typer.Argument(..., help="Fixture name, without .json"),
    tol: Optional[float] = TolOption,
    max_sweeps: Optional[int] = MaxSweepsOption,
    phi: Optional[Phi] = PhiOption,
    method: Optional[Method] = MethodOption,
    with_access: bool = WithAccessOption,
    level: Optional[int] = LevelOption,
    seed: Optional[int] = SeedOption,
    csv: Optional[Path] = CsvOption,
    quiet: bool = QuietOption,
    timings: bool = TimingsOption,
    output: Optional[Path] = OutputOption,
) -> int:
    """Solve one of the shipped golden fixtures."""
    setup_logging(quiet=quiet)
    path = settings.fixtures_dir() / f"{name}.json"
    if not path.is_file():
        raise click.UsageError(f"Unknown fixture {name!r} in {settings.fixtures_dir()}")
    overrides = _overrides(tol, max_sweeps, phi, method, with_access, level, seed)
    return _solve_one(path.read_bytes(), name, overrides, csv, timings, output)


@app.command()
def batch(
    path: str = typer.Argument(..., help="JSON array of instances, or - for stdin"),
    tol: Optional[float] = TolOption,
    max_sweeps: Optional[int] = MaxSweepsOption,
    phi: Optional[Phi] = PhiOption,
    method: Optional[Method] = MethodOption,
    with_access: bool = WithAccessOption,
    level: Optional[int] = LevelOption,
    seed: Optional[int] = SeedOption,
    quiet: bool = QuietOption,
    timings: bool = TimingsOption,
    output: Optional[Path] = OutputOption,
) -> int:
    """Solve a batch concurrently; results follow the input order."""
    setup_logging(quiet=quiet)
    try:
        documents = parse_json(_read_source(path), source=path)
    except IronkitError as e:
        _emit(render_json({"status": "error", "error": e.to_dict()}), output)
        return e.exit_code
    if not isinstance(documents, list):
        _emit(render_json({"status": "error", "error": {"type": "SchemaError", "path": "/",
                                                         "message": "A batch must be a JSON array",
                                                         "exit_code": EXIT_SCHEMA}}), output)
        return EXIT_SCHEMA

    overrides = _overrides(tol, max_sweeps, phi, method, with_access, level, seed)
    states = process_batch(documents, overrides, timings)
    results: List[Dict[str, Any]] = [
        error_document(state) if state.get("error") else state["result_document"] for state in states
    ]
    _emit(render_json(results), output)
    return max((exit_code(state) for state in states), default=0)


@app.command(name="fixtures")
def list_fixtures() -> int:
    """List the shipped golden fixtures."""
    directory = settings.fixtures_dir()
    table = Table(title=f"Fixtures in {directory}")
    table.add_column("name")
    table.add_column("mode")
    table.add_column("grid")
    for path in sorted(directory.glob("*.json")):
        try:
            document = parse_json(path.read_bytes(), source=path.name)
        except IronkitError:
            table.add_row(path.stem, "unreadable", "")
            continue
        axes = document.get("axes") or []
        shape = "x".join(str(len(a.get("points", []))) for a in axes) or f"dyadic d={document.get('dimension', '?')}"
        table.add_row(path.stem, str(document.get("mode")), shape)
    Console().print(table)
    return 0


def run_cli(argv: Optional[List[str]] = None) -> int:
    """Run the CLI in-process and return the exit code (1 for usage errors)"""
    command = typer.main.get_command(app)
    try:
        result = command.main(args=list(argv if argv is not None else sys.argv[1:]),
                              prog_name="ironkit", standalone_mode=False)
    except click.UsageError as e:
        stderr.print(f"[red]Usage error:[/red] {e.format_message()}")
        return EXIT_USAGE
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.Abort:
        return EXIT_USAGE
    return int(result) if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(run_cli())
