"""
Prompt template assets.

Layout on disk:
    templates/<formulation>/<template id>.txt   template text with {slot} placeholders
    templates/<formulation>/labels.json         "_default" entry plus per-template overrides

The sidecar entry of a template carries its flavor, the surface words used for
canonical labels and answers, and the phrasing of generated questions or
hypotheses.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import json
import logging
import re

from .errors import MissingSlot, TemplateError
from .schemas import FLAVORS, FORMULATIONS

logger = logging.getLogger(__name__)

SLOTS = ("context", "premise", "hypothesis", "arg1", "arg2", "question",
         "choices", "events", "marker", "cot", "target")
ANSWER_SLOTS = ("cot", "target")

DEFAULT_TEMPLATE_DIR = Path(__file__).resolve().parents[2] / "templates"

_SLOT = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True, eq=False)
class PromptTemplate:
    id: str
    formulation: str
    text: str
    flavor: str = "plain"
    labels: Dict[str, str] = field(default_factory=dict)
    descriptions: Dict[str, str] = field(default_factory=dict)
    answers: Dict[str, str] = field(default_factory=dict)
    affirmative: Tuple[str, ...] = ()
    negative: Tuple[str, ...] = ()
    hypotheses: Dict[str, str] = field(default_factory=dict)
    questions: Dict[str, str] = field(default_factory=dict)
    empty_answer: str = "none"
    answer_prefix: str = ""

    @property
    def slots(self) -> List[str]:
        return [name for name in _SLOT.findall(self.text) if name in SLOTS]

    @property
    def cut_point(self) -> int:
        """Offset of the first answer slot; query prompts end here"""
        positions = [self.text.find("{" + s + "}") for s in ANSWER_SLOTS]
        positions = [p for p in positions if p >= 0]
        return min(positions) if positions else len(self.text)

    @property
    def query_part(self) -> str:
        return self.text[:self.cut_point]

    @property
    def answer_part(self) -> str:
        return self.text[self.cut_point:]

    def surface(self, label: str) -> str:
        """Template word for a canonical relation label"""
        try:
            return self.labels[label]
        except KeyError:
            raise TemplateError(f"template {self.id} has no surface word for {label}") from None

    def choice_lines(self) -> str:
        seen = []
        for canonical in ("BEFORE", "AFTER", "COEX", "NONE"):
            word = self.labels.get(canonical)
            if word and word not in seen:
                seen.append(word)
        lines = []
        for word in seen:
            description = self.descriptions.get(word)
            lines.append(f"- {word}: {description}" if description else f"- {word}")
        return "\n".join(lines)

    def canonical_vocabulary(self) -> Dict[str, str]:
        """Surface word (lowercased) to canonical label; a word shared by COEX and NONE reads as COEX"""
        vocab: Dict[str, str] = {}
        for canonical in ("BEFORE", "AFTER", "NONE", "COEX"):
            word = self.labels.get(canonical)
            if word:
                vocab[word.lower()] = canonical
        return vocab


def fill(text: str, values: Mapping[str, str], template_id: str = "") -> str:
    """Substitute known slots in one pass; unknown brace words are left alone"""
    def substitute(m):
        name = m.group(1)
        if name not in SLOTS:
            return m.group(0)
        if name not in values:
            raise MissingSlot(f"template {template_id} needs a value for {{{name}}}",
                              {"template": template_id, "slot": name})
        return str(values[name])
    return _SLOT.sub(substitute, text)


def _merge(default: Dict, override: Dict) -> Dict:
    merged = dict(default)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def _check(template: PromptTemplate):
    if "{target}" not in template.text:
        raise TemplateError(f"template {template.id} has no {{target}} slot")
    if template.flavor not in FLAVORS:
        raise TemplateError(f"template {template.id} has unknown flavor {template.flavor}")
    if template.flavor == "cot" and template.formulation not in ("mrc", "timeline"):
        raise TemplateError(f"cot flavor is only defined for mrc and timeline ({template.id})")
    if template.flavor == "code" and template.formulation != "timeline":
        raise TemplateError(f"code flavor is only defined for timeline ({template.id})")
    if template.flavor == "cot" and "{cot}" not in template.text:
        raise TemplateError(f"cot template {template.id} has no {{cot}} slot")
    trailing = [s for s in _SLOT.findall(template.answer_part) if s in SLOTS and s not in ANSWER_SLOTS]
    if trailing:
        raise TemplateError(f"template {template.id} has input slots after the answer: {trailing}")
    if template.formulation == "pairwise":
        for label in ("BEFORE", "AFTER", "COEX", "NONE"):
            if label not in template.labels:
                raise TemplateError(f"pairwise template {template.id} misses a word for {label}")
    if template.formulation == "nli":
        if not {"entail", "not_entail"} <= set(template.answers):
            raise TemplateError(f"nli template {template.id} misses answer words")
        if not {"AFTER", "BEFORE", "COEX"} <= set(template.hypotheses):
            raise TemplateError(f"nli template {template.id} misses hypotheses")
    if template.formulation == "mrc" and not {"AFTER", "BEFORE", "COEX"} <= set(template.questions):
        raise TemplateError(f"mrc template {template.id} misses questions")


def load_formulation(directory: Path, formulation: str) -> Dict[str, PromptTemplate]:
    sidecar_path = directory / "labels.json"
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8")) if sidecar_path.exists() else {}
    default = sidecar.get("_default", {})

    templates = {}
    for path in sorted(directory.glob("*.txt")):
        entry = _merge(default, sidecar.get(path.stem, {}))
        template = PromptTemplate(
            id=path.stem,
            formulation=formulation,
            text=path.read_text(encoding="utf-8").rstrip("\n"),
            flavor=entry.get("flavor", "plain"),
            labels=dict(entry.get("labels", {})),
            descriptions=dict(entry.get("descriptions", {})),
            answers=dict(entry.get("answers", {})),
            affirmative=tuple(entry.get("affirmative", ())),
            negative=tuple(entry.get("negative", ())),
            hypotheses=dict(entry.get("hypotheses", {})),
            questions=dict(entry.get("questions", {})),
            empty_answer=entry.get("empty_answer", "none"),
            answer_prefix=entry.get("answer_prefix", ""),
        )
        _check(template)
        templates[template.id] = template
    return templates


class TemplateRegistry:
    """Read-only set of templates keyed by formulation and id"""

    def __init__(self, templates: Sequence[PromptTemplate]):
        self._templates: Dict[str, PromptTemplate] = {}
        for t in templates:
            if t.id in self._templates:
                raise TemplateError(f"duplicate template id {t.id}")
            self._templates[t.id] = t

    @classmethod
    def load(cls, root: Optional[Path] = None) -> "TemplateRegistry":
        root = Path(root) if root else DEFAULT_TEMPLATE_DIR
        if not root.is_dir():
            raise TemplateError(f"template directory {root} does not exist")
        templates = []
        for formulation in FORMULATIONS:
            directory = root / formulation
            if directory.is_dir():
                templates.extend(load_formulation(directory, formulation).values())
        logger.info("Loaded %d templates from %s", len(templates), root)
        return cls(templates)

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise TemplateError(f"unknown template {template_id}") from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates

    def __len__(self) -> int:
        return len(self._templates)

    def select(self, formulation: str, flavor: Optional[str] = "plain",
               ids: Optional[Sequence[str]] = None) -> List[PromptTemplate]:
        chosen = [t for t in self._templates.values() if t.formulation == formulation]
        if flavor is not None:
            chosen = [t for t in chosen if t.flavor == flavor]
        if ids:
            chosen = [t for t in chosen if t.id in set(ids)]
        return sorted(chosen, key=lambda t: t.id)
