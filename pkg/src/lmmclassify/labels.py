"""Candidate class set: loading, canonicalization, and label prompt templates.

Class-list files are UTF-8, one label per line; blank lines and
``#``-prefixed lines are ignored. Labels are canonicalized (underscores to
spaces, whitespace collapsed, lowercased) so that matching downstream is
case- and padding-insensitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, EmptyTextError


def canonicalize(text: str) -> str:
    """Normalize a label or answer string.

    Underscores become spaces, whitespace runs collapse to a single space,
    leading/trailing whitespace is removed, and the result is lowercased.
    Punctuation is deliberately left alone.
    """
    out = " ".join(text.replace("_", " ").split()).lower()
    if not out:
        raise EmptyTextError(f"text {text!r} is empty after canonicalization")
    return out


@dataclass(frozen=True)
class ClassLabel:
    raw_text: str
    canonical_text: str
    index: int


@dataclass(frozen=True)
class ClassLabelSet:
    """Ordered, immutable set of candidate classes for one dataset."""

    dataset_id: str
    labels: tuple[ClassLabel, ...]
    _by_canonical: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ConfigError(
                f"class set {self.dataset_id!r} needs at least 2 labels, got {len(self.labels)}"
            )
        by_canonical: dict[str, ClassLabel] = {}
        for label in self.labels:
            if label.canonical_text in by_canonical:
                raise ConfigError(
                    f"duplicate canonical label {label.canonical_text!r} in {self.dataset_id!r}"
                )
            by_canonical[label.canonical_text] = label
        object.__setattr__(self, "_by_canonical", by_canonical)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def canonical_texts(self) -> tuple[str, ...]:
        return tuple(label.canonical_text for label in self.labels)

    def find(self, canonical_text: str) -> ClassLabel | None:
        return self._by_canonical.get(canonical_text)


def load_class_list(path: str | Path, dataset_id: str | None = None) -> ClassLabelSet:
    """Read a class-list file into a ClassLabelSet.

    Labels keep their file order; ``index`` is the position in that order.
    Duplicate canonical labels are rejected with both line numbers named.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"class list not found: {path}")
    labels: list[ClassLabel] = []
    seen: dict[str, int] = {}  # canonical -> 1-based line number
    for lineno, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            canonical = canonicalize(line)
        except EmptyTextError as exc:
            raise ConfigError(f"{path}:{lineno}: empty label") from exc
        if canonical in seen:
            raise ConfigError(
                f"{path}: duplicate label {canonical!r} on lines {seen[canonical]} and {lineno}"
            )
        seen[canonical] = lineno
        labels.append(ClassLabel(raw_text=line, canonical_text=canonical, index=len(labels)))
    if not labels:
        raise ConfigError(f"class list is empty: {path}")
    return ClassLabelSet(dataset_id=dataset_id or path.stem, labels=tuple(labels))


@dataclass(frozen=True)
class PromptTemplate:
    """Single-placeholder template applied to labels before embedding."""

    template_id: str
    template_text: str

    def __post_init__(self):
        if self.template_text.count("{}") != 1:
            raise ConfigError(
                f"template {self.template_id!r} must contain exactly one {{}} placeholder, "
                f"got {self.template_text.count('{}')}"
            )


IDENTITY_TEMPLATE = PromptTemplate(template_id="identity", template_text="{}")


def apply_template(template: PromptTemplate, label: ClassLabel) -> str:
    """Substitute the label's canonical text into the template placeholder."""
    return template.template_text.replace("{}", label.canonical_text)


def load_template(path: str | Path) -> PromptTemplate:
    """Read a template file: first line is the id, second line the text."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"template file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise ConfigError(f"template file needs two lines (id, text): {path}")
    return PromptTemplate(template_id=lines[0].strip(), template_text=lines[1])
