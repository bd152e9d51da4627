"""Prompt template assets and placeholder substitution.

Templates ship as plain text files next to this module, indexed by a JSON
manifest. Template text is preserved byte for byte, quirks included; only
single-token placeholders of the form {name} are substituted. Brace blocks
that are not single tokens (literal JSON examples inside some templates)
pass through untouched.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

log = logging.getLogger(__name__)

# A placeholder is a single lowercase token in braces. Anything else in
# braces is literal template content.
_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9-]*)\}")


class MissingAsset(KeyError):
    """No prompt asset exists for the requested stage/model combination."""


class PromptStage(enum.Enum):
    DOMAIN_CLASSIFICATION = "domain-classification"
    ENTITY_EXTRACTION = "entity-extraction"
    MCQ_ANSWERING = "mcq-answering"
    SRP_TRACKING = "srp-tracking"


@dataclass(frozen=True)
class PromptAsset:
    """One immutable template with its declared placeholder set."""

    name: str
    stage: PromptStage
    model_key: str
    role: str  # "final" or "seed"
    template: str
    placeholders: frozenset[str]

    def __post_init__(self) -> None:
        found = frozenset(_PLACEHOLDER_RE.findall(self.template))
        if found != self.placeholders:
            raise ValueError(
                f"asset {self.name}: declared placeholders {sorted(self.placeholders)} "
                f"but template contains {sorted(found)}"
            )

    def render(self, bindings: Mapping[str, str]) -> str:
        """Substitute every declared placeholder. Under- and over-binding are
        both errors; a placeholder appearing several times is replaced at
        every occurrence."""
        missing = self.placeholders - set(bindings)
        extra = set(bindings) - self.placeholders
        if missing or extra:
            raise ValueError(
                f"asset {self.name}: missing bindings {sorted(missing)}, unknown bindings {sorted(extra)}"
            )
        return _PLACEHOLDER_RE.sub(lambda m: bindings[m.group(1)], self.template)


_SRP_FALLBACK = "gpt-4-turbo"


class PromptLibrary:
    """All shipped assets, addressable by name or by stage and model."""

    def __init__(self, assets: list[PromptAsset]):
        self._by_name = {a.name: a for a in assets}
        if len(self._by_name) != len(assets):
            raise ValueError("duplicate asset names")

    def __iter__(self):
        return iter(self._by_name.values())

    def asset(self, name: str) -> PromptAsset:
        try:
            return self._by_name[name]
        except KeyError:
            raise MissingAsset(name) from None

    def domain_classification(self) -> PromptAsset:
        return self.asset("domain_classification")

    def entity_extraction(self, extended: bool = True) -> PromptAsset:
        return self.asset("entity_extraction_extended" if extended else "entity_extraction")

    def mcq(self) -> PromptAsset:
        return self.asset("mcq_answering")

    def srp(self, model_key: str) -> PromptAsset:
        """Model-tuned tracking template. Unknown models fall back to the
        strongest-model variant rather than failing the run."""
        name = f"srp_{model_key}"
        if name in self._by_name:
            return self._by_name[name]
        fallback = f"srp_{_SRP_FALLBACK}"
        if fallback not in self._by_name:
            raise MissingAsset(name)
        log.warning("no tracking template for model %r, using %s variant", model_key, _SRP_FALLBACK)
        return self._by_name[fallback]

    def seed(self, stage: PromptStage) -> PromptAsset:
        for asset in self._by_name.values():
            if asset.role == "seed" and asset.stage is stage:
                return asset
        raise MissingAsset(f"seed for {stage.value}")


def load_assets() -> PromptLibrary:
    """Load the shipped manifest and template files."""
    root = resources.files(__package__) / "assets"
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    assets = []
    for row in manifest["assets"]:
        template = (root / row["file"]).read_text(encoding="utf-8")
        assets.append(
            PromptAsset(
                name=row["name"],
                stage=PromptStage(row["stage"]),
                model_key=row["model_key"],
                role=row["role"],
                template=template,
                placeholders=frozenset(row["placeholders"]),
            )
        )
    return PromptLibrary(assets)
