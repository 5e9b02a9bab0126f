"""Domain types for class taxonomies, boxes, images, and datasets.

Everything here is immutable after construction and safe to share
between threads. The annotation file format is a purpose-built JSON
schema (see ``load_dataset``); there is deliberately no COCO/PASCAL
support.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import UnknownLabelError, ValidationError

# Reserved token for "no detection" in confusion rows and matrices.
# Never a valid class label.
MISS = "__MISS__"


@dataclass(frozen=True)
class ClassTaxonomy:
    """Two-level class tree: general classes, each owning fine-grained classes.

    Attributes:
        fine_of: general label -> ordered tuple of fine labels (a partition).
        negative_label: reserved label for background/negative images; never
            appears as a general or fine label.
    """

    fine_of: Mapping[str, tuple[str, ...]]
    negative_label: str = "negative"
    _general_by_fine: Mapping[str, str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        fine_of = {g: tuple(fs) for g, fs in self.fine_of.items()}
        object.__setattr__(self, "fine_of", fine_of)
        violations = validate_taxonomy(self)
        if violations:
            raise ValidationError("invalid taxonomy: " + "; ".join(violations))
        by_fine = {}
        for g, fines in fine_of.items():
            for f in fines:
                by_fine[f] = g
        object.__setattr__(self, "_general_by_fine", by_fine)

    @property
    def generals(self) -> tuple[str, ...]:
        return tuple(self.fine_of)

    @property
    def fine_labels(self) -> tuple[str, ...]:
        return tuple(f for fines in self.fine_of.values() for f in fines)

    def general_of(self, fine: str) -> str:
        try:
            return self._general_by_fine[fine]
        except KeyError:
            raise UnknownLabelError(f"unknown fine label {fine!r}") from None

    def is_general(self, label: str) -> bool:
        return label in self.fine_of

    def is_fine(self, label: str) -> bool:
        return label in self._general_by_fine

    def label_at_level(self, label: str, level: str) -> str:
        """Project a fine or general label to the requested level.

        A general label cannot be refined to fine level; that raises
        UnknownLabelError, as does a label foreign to the taxonomy.
        """
        if level == "general":
            if self.is_general(label):
                return label
            return self.general_of(label)
        if level == "fine":
            if self.is_fine(label):
                return label
            raise UnknownLabelError(f"label {label!r} is not a fine label")
        raise ValidationError(f"unknown level {level!r}")

    def to_json(self) -> dict:
        return {
            "generals": {g: list(fs) for g, fs in self.fine_of.items()},
            "negative_label": self.negative_label,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ClassTaxonomy":
        if not isinstance(obj, Mapping) or "generals" not in obj:
            raise ValidationError("taxonomy must be an object with a 'generals' key")
        return cls(
            fine_of={g: tuple(fs) for g, fs in obj["generals"].items()},
            negative_label=obj.get("negative_label", "negative"),
        )


def validate_taxonomy(taxonomy: ClassTaxonomy) -> list[str]:
    """Return all invariant violations (empty list means valid). Pure."""
    violations = []
    fine_of = taxonomy.fine_of
    if not fine_of:
        violations.append("no general classes")
    seen: dict[str, str] = {}
    for g, fines in fine_of.items():
        if not fines:
            violations.append(f"empty general class {g!r}")
        for f in fines:
            if f in fine_of:
                violations.append(f"label {f!r} is both general and fine")
            if f in seen:
                violations.append(
                    f"not a partition: fine label {f!r} under both "
                    f"{seen[f]!r} and {g!r}"
                )
            seen[f] = g
    neg = taxonomy.negative_label
    if neg in fine_of or neg in seen:
        violations.append(f"negative label {neg!r} collides with a class label")
    if MISS in fine_of or MISS in seen:
        violations.append(f"reserved label {MISS!r} used as a class label")
    return violations


def general_of(taxonomy: ClassTaxonomy, fine: str) -> str:
    """Return the unique general class containing ``fine``."""
    return taxonomy.general_of(fine)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner plus extent, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def as_xyxy(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.x + self.w, self.y + self.h)

    def validate(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"non-positive box extent {vals}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"negative box corner {vals}")


@dataclass(frozen=True)
class Detection:
    """One detector output: box, emitted label, confidence in [0, 1]."""

    box: BoundingBox
    label: str
    confidence: float


@dataclass(frozen=True)
class GroundTruthObject:
    """Annotated object: box plus its fine-grained class label."""

    box: BoundingBox
    fine_label: str


@dataclass(frozen=True)
class AnnotatedImage:
    """Image annotation; an empty object list marks a negative image."""

    id: str
    width: float
    height: float
    objects: tuple[GroundTruthObject, ...] = ()

    @property
    def is_negative(self) -> bool:
        return not self.objects


@dataclass(frozen=True)
class Dataset:
    """An ordered image collection with its taxonomy.

    ``sequences`` optionally groups image ids into ordered runs for the
    sequence-aware routing mode; each id may appear in at most one
    sequence.
    """

    taxonomy: ClassTaxonomy
    images: tuple[AnnotatedImage, ...]
    sequences: tuple[tuple[str, ...], ...] | None = None

    def image_by_id(self, image_id: str) -> AnnotatedImage:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise ValidationError(f"unknown image id {image_id!r}") from None

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {img.id: img for img in self.images})

    @property
    def positive_images(self) -> tuple[AnnotatedImage, ...]:
        return tuple(img for img in self.images if img.objects)


def _validate_image(img: AnnotatedImage, taxonomy: ClassTaxonomy) -> None:
    if not img.id:
        raise ValidationError("image with empty id")
    if not (
        math.isfinite(img.width)
        and math.isfinite(img.height)
        and img.width > 0
        and img.height > 0
    ):
        raise ValidationError(f"image {img.id!r}: bad dimensions {img.width}x{img.height}")
    for obj in img.objects:
        try:
            obj.box.validate()
        except ValidationError as exc:
            raise ValidationError(f"image {img.id!r}: {exc}") from None
        if not taxonomy.is_fine(obj.fine_label):
            raise ValidationError(
                f"image {img.id!r}: unknown fine label {obj.fine_label!r}"
            )
        if obj.box.x + obj.box.w > img.width or obj.box.y + obj.box.h > img.height:
            raise ValidationError(
                f"image {img.id!r}: box {obj.box} exceeds {img.width}x{img.height}"
            )


def make_dataset(
    taxonomy: ClassTaxonomy,
    images: Iterable[AnnotatedImage],
    sequences: Sequence[Sequence[str]] | None = None,
) -> Dataset:
    """Assemble and validate a Dataset; rejects rather than repairs."""
    images = tuple(images)
    seen_ids = set()
    for img in images:
        if img.id in seen_ids:
            raise ValidationError(f"duplicate image id {img.id!r}")
        seen_ids.add(img.id)
        _validate_image(img, taxonomy)
    seqs = None
    if sequences is not None:
        covered = set()
        seqs = tuple(tuple(s) for s in sequences)
        for seq in seqs:
            for image_id in seq:
                if image_id not in seen_ids:
                    raise ValidationError(f"sequence references unknown image id {image_id!r}")
                if image_id in covered:
                    raise ValidationError(f"image id {image_id!r} in more than one sequence")
                covered.add(image_id)
    return Dataset(taxonomy=taxonomy, images=images, sequences=seqs)


def _image_from_json(obj: Mapping) -> AnnotatedImage:
    try:
        objects = tuple(
            GroundTruthObject(
                box=BoundingBox(*[float(v) for v in o["box"]]),
                fine_label=o["label"],
            )
            for o in obj.get("objects", [])
        )
        return AnnotatedImage(
            id=obj["id"],
            width=float(obj["width"]),
            height=float(obj["height"]),
            objects=objects,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed image record {obj.get('id', '<no id>')!r}: {exc}") from None


def load_dataset(path) -> Dataset:
    """Load and validate an annotation file.

    Schema::

        {"taxonomy": {"generals": {"dog": ["pekinese", "spaniel"], ...},
                      "negative_label": "negative"},
         "images": [{"id": "img001", "width": 800, "height": 800,
                     "objects": [{"label": "pekinese", "box": [x, y, w, h]}]}],
         "sequences": [["img001", "img002"], ...]}   # optional

    Raises ValidationError naming the offending image on any invariant
    violation; malformed JSON raises ValidationError as a parse error.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"parse error in {path}: {exc}") from None
    if not isinstance(raw, dict) or "taxonomy" not in raw or "images" not in raw:
        raise ValidationError(f"{path}: expected top-level 'taxonomy' and 'images' keys")
    taxonomy = ClassTaxonomy.from_json(raw["taxonomy"])
    images = [_image_from_json(o) for o in raw["images"]]
    return make_dataset(taxonomy, images, raw.get("sequences"))


def dataset_to_json(dataset: Dataset) -> dict:
    out: dict = {
        "taxonomy": dataset.taxonomy.to_json(),
        "images": [
            {
                "id": img.id,
                "width": img.width,
                "height": img.height,
                "objects": [
                    {"label": o.fine_label, "box": [o.box.x, o.box.y, o.box.w, o.box.h]}
                    for o in img.objects
                ],
            }
            for img in dataset.images
        ],
    }
    if dataset.sequences is not None:
        out["sequences"] = [list(s) for s in dataset.sequences]
    return out


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset back to the annotation JSON schema (canonical form)."""
    from .reporting import dump_canonical

    dump_canonical(dataset_to_json(dataset), path)
