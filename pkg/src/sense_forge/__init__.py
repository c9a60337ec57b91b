"""Text-to-SQL data tooling: prompts, execution-based evaluation, synthesis and preference data."""

from __future__ import annotations

__version__ = "0.1.0"


def versions() -> dict[str, str]:
    """Package version plus the frozen rule-set identifiers reports are tied to."""
    from .hardness import HARDNESS_RULES_VERSION
    from .prompts import PROMPT_TEMPLATE_VERSION

    return {
        "sense_forge": __version__,
        "hardness_rules": HARDNESS_RULES_VERSION,
        "prompt_template": PROMPT_TEMPLATE_VERSION,
    }


def version_info() -> str:
    v = versions()
    return (f"sense-forge {v['sense_forge']} "
            f"(hardness rules {v['hardness_rules']}, prompt template {v['prompt_template']})")


__all__ = ["__version__", "version_info", "versions"]
