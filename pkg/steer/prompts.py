"""Prompt template loading and rendering

Templates are UTF-8 Jinja2 files (config/templates by default). Rendering
is strict: an undefined placeholder raises TemplateError naming it, and each
template kind declares the placeholders it must contain.
"""

from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Union

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateNotFound, meta
from jinja2.exceptions import TemplateSyntaxError, UndefinedError

from .errors import TemplateError
from .logging_setup import get_logger

DEFAULT_TEMPLATE_DIR = Path(__file__).parent.parent / 'config' / 'templates'

# Placeholders each template kind must reference
REQUIRED_PLACEHOLDERS: Dict[str, frozenset] = {
    "rater": frozenset({"persona_block", "patient_case"}),
    "gap_fill": frozenset({"target_bias", "start_bias", "end_bias", "references"}),
    "edge_expand": frozenset({"target_bias", "direction", "references"}),
    "judge": frozenset({"patient_case", "rationale"}),
}

DEFINITIONS_PLACEHOLDER = "[Scale level definitions: supply via scale.definitions_file]"


def _undefined_name(error: UndefinedError) -> Optional[str]:
    # Jinja2 messages read "'name' is undefined"
    message = str(error)
    if message.startswith("'") and "' is undefined" in message:
        return message[1:message.index("' is undefined")]
    return None


class PromptTemplates:
    """Loads named templates from a directory and renders them strictly."""

    def __init__(self, template_dir: Union[str, Path] = None):
        self.template_dir = Path(template_dir) if template_dir else DEFAULT_TEMPLATE_DIR
        self.env = Environment(
            loader=FileSystemLoader(str(self.template_dir)),
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=False,
            autoescape=False,
        )
        self.log = get_logger()
        self._checked: Dict[str, str] = {}

    def placeholders(self, template_name: str) -> frozenset:
        """Undeclared variables referenced by a template file."""
        try:
            source = self.env.loader.get_source(self.env, template_name)[0]
            return frozenset(meta.find_undeclared_variables(self.env.parse(source)))
        except TemplateNotFound:
            raise TemplateError(f"template {template_name!r} not found in {self.template_dir}")
        except TemplateSyntaxError as e:
            raise TemplateError(f"template {template_name!r} is malformed: {e}")

    def check(self, template_name: str, kind: str):
        """Fail if the template lacks a placeholder its kind requires."""
        if self._checked.get(template_name) == kind:
            return
        required = REQUIRED_PLACEHOLDERS.get(kind, frozenset())
        missing = sorted(required - self.placeholders(template_name))
        if missing:
            raise TemplateError(
                f"template {template_name!r} is missing placeholder {missing[0]!r}",
                placeholder=missing[0],
            )
        self._checked[template_name] = kind

    def render(self, template_name: str, kind: str, context: Mapping) -> str:
        """Render a template after checking its required placeholders."""
        self.check(template_name, kind)
        try:
            return self.env.get_template(template_name).render(**context).strip() + "\n"
        except UndefinedError as e:
            name = _undefined_name(e)
            raise TemplateError(
                f"template {template_name!r} uses unresolved placeholder {name!r}",
                placeholder=name,
            )


def load_definitions(path: Optional[Union[str, Path]]) -> str:
    """Scale-definition block injected into rater prompts (user-supplied)."""
    if not path:
        return DEFINITIONS_PLACEHOLDER
    return Path(path).read_text(encoding='utf-8').strip()


def format_bias(value: float) -> str:
    return f"{value:.3f}"


def reference_blocks(references: Iterable) -> list:
    """(prompt_text, bias) pairs as template dicts with formatted biases."""
    return [{"prompt_text": text, "bias": format_bias(bias)} for text, bias in references]
