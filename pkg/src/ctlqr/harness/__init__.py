"""Experiment harness: configuration, runner, plotting and command line."""
from .config import ExperimentConfig, from_dict, parse_config
from .runner import RunManifest, run
from .svg import render_svg_lineplot

__all__ = ["ExperimentConfig", "from_dict", "parse_config", "RunManifest", "run", "render_svg_lineplot"]
