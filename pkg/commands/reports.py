"""
Report Rendering

Markdown reports rendered from the jinja2 templates next to this module.
"""

from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader, StrictUndefined

TEMPLATE_DIR = Path(__file__).parent / "templates"

environment = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    undefined=StrictUndefined,
    trim_blocks=False,
    keep_trailing_newline=True,
)


def render(template_name: str, **context: Any) -> str:
    return environment.get_template(template_name).render(**context)


def write_report(path: Path, template_name: str, **context: Any) -> Path:
    """Render template_name with context into path and return the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(template_name, **context))
    return path
