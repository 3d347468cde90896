"""Dataset manifest: text format, parsing and the loaded form.

Line-oriented grammar (tokens separated by whitespace, ``#`` starts a
full-line comment, blank lines are ignored):

    classes: <N>                      header, first meaningful line
    split: <tag>                      optional, defaults to "unspecified"
    <class> <feature-path> [bbox <x0> <y0> <x1> <y1>] [image <path>]

Feature paths are relative to the manifest's directory.  Bounding boxes
are half-open [x0, x1) x [y0, y1) in feature-grid coordinates (the grid
of the record's feature file).  Every line either matches a production or
raises a FormatError carrying its 1-based line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import CapacityError, DomainError, FormatError
from .localization import BBox


@dataclass(frozen=True)
class ManifestRecord:
    class_name: str
    feature_path: str
    bbox: BBox | None = None
    image_path: str | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """An ordered record list grouped by class.

    ``root`` is the directory feature paths resolve against; ``None``
    marks an in-memory dataset whose fields never touch disk.
    """

    classes: tuple[str, ...]
    records: tuple[ManifestRecord, ...]
    split: str = "unspecified"
    root: Path | None = None
    _by_class: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise DomainError("manifest class names must be unique")
        by_class: dict[str, list[int]] = {name: [] for name in self.classes}
        for i, rec in enumerate(self.records):
            if rec.class_name not in by_class:
                raise DomainError(f"record {i} has unknown class {rec.class_name!r}")
            by_class[rec.class_name].append(i)
        object.__setattr__(self, "_by_class", by_class)

    def class_record_indices(self, class_name: str) -> list[int]:
        try:
            return list(self._by_class[class_name])
        except KeyError:
            raise CapacityError(f"manifest has no class {class_name!r}") from None

    def resolve(self, relative: str) -> Path:
        if self.root is None:
            raise DomainError("in-memory manifest has no file paths to resolve")
        return self.root / relative


def ensure_disjoint_classes(a: DatasetManifest, b: DatasetManifest) -> None:
    """Reject manifests that share class names (e.g. a train/test pair)."""
    shared = sorted(set(a.classes) & set(b.classes))
    if shared:
        raise DomainError(
            f"splits {a.split!r} and {b.split!r} share classes: {', '.join(shared)}")


def parse_manifest(text: str, root: Path | None = None) -> DatasetManifest:
    """Parse manifest text; ``root`` is attached for later path resolution."""
    declared = None
    split = "unspecified"
    records: list[ManifestRecord] = []
    classes: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if declared is None:
            head = line.split()
            if len(head) != 2 or head[0] != "classes:":
                raise FormatError("expected header 'classes: <N>'", line=lineno)
            try:
                declared = int(head[1])
            except ValueError:
                raise FormatError(f"class count {head[1]!r} is not an integer",
                                  line=lineno) from None
            if declared < 1:
                raise FormatError("class count must be >= 1", line=lineno)
            continue
        if line.startswith("split:"):
            parts = line.split()
            if len(parts) != 2:
                raise FormatError("expected 'split: <tag>'", line=lineno)
            split = parts[1]
            continue
        records.append(_parse_record(line, lineno))
        name = records[-1].class_name
        if name not in seen:
            seen.add(name)
            classes.append(name)
    if declared is None:
        raise FormatError("missing 'classes: <N>' header", line=1)
    if declared != len(classes):
        raise FormatError(
            f"header declares {declared} classes but records name {len(classes)}",
            line=1)
    return DatasetManifest(classes=tuple(classes), records=tuple(records),
                           split=split, root=root)


def _parse_record(line: str, lineno: int) -> ManifestRecord:
    tokens = line.split()
    if len(tokens) < 2:
        raise FormatError("record needs '<class> <feature-path>'", line=lineno)
    class_name, feature_path = tokens[0], tokens[1]
    rest = tokens[2:]
    bbox = None
    image_path = None
    while rest:
        key = rest[0]
        if key == "bbox":
            if bbox is not None:
                raise FormatError("duplicate 'bbox'", line=lineno)
            if len(rest) < 5:
                raise FormatError("expected 4 integers after 'bbox'", line=lineno)
            try:
                x0, y0, x1, y1 = (int(t) for t in rest[1:5])
            except ValueError:
                raise FormatError("expected 4 integers after 'bbox'",
                                  line=lineno) from None
            try:
                bbox = BBox(x_min=x0, y_min=y0, x_max=x1, y_max=y1)
            except DomainError as exc:
                raise FormatError(str(exc), line=lineno) from None
            rest = rest[5:]
        elif key == "image":
            if image_path is not None:
                raise FormatError("duplicate 'image'", line=lineno)
            if len(rest) < 2:
                raise FormatError("expected a path after 'image'", line=lineno)
            image_path = rest[1]
            rest = rest[2:]
        else:
            raise FormatError(f"unexpected token {key!r}", line=lineno)
    return ManifestRecord(class_name=class_name, feature_path=feature_path,
                          bbox=bbox, image_path=image_path)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read and parse a manifest file; optionally verify feature files exist."""
    path = Path(path)
    manifest = parse_manifest(path.read_text(), root=path.parent)
    if check_files:
        for i, rec in enumerate(manifest.records):
            target = manifest.resolve(rec.feature_path)
            if not target.is_file():
                raise DomainError(
                    f"record {i} ({rec.class_name}): feature file missing: {target}")
    return manifest


def format_manifest(manifest: DatasetManifest) -> str:
    """Canonical text for a manifest (inverse of :func:`parse_manifest`)."""
    lines = [f"classes: {len(manifest.classes)}"]
    if manifest.split != "unspecified":
        lines.append(f"split: {manifest.split}")
    for rec in manifest.records:
        parts = [rec.class_name, rec.feature_path]
        if rec.bbox is not None:
            parts.append(f"bbox {rec.bbox.x_min} {rec.bbox.y_min} "
                         f"{rec.bbox.x_max} {rec.bbox.y_max}")
        if rec.image_path is not None:
            parts.append(f"image {rec.image_path}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def write_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(format_manifest(manifest))
