"""
Command Router - Combines all subcommands.
"""
import argparse

from commands import analytics, graphs, ingestion, models
from commands.common import Settings


def build_parser(settings: Settings) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchgraph",
        description="Vulnerability dataset construction and per-CWE graph classifiers for C functions",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    # Include all sub-commands
    graphs.register(subparsers, settings)
    ingestion.register(subparsers, settings)
    models.register(subparsers, settings)
    analytics.register(subparsers, settings)
    return parser
