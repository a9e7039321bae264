"""Dementia stage labels and the CDR score mapping."""

from __future__ import annotations

from enum import IntEnum

from adens.errors import UnknownRating


class ClassLabel(IntEnum):
    """The four output stages, in fixed index order used by every 4-vector."""

    NONDEMENTED = 0
    VERY_MILD = 1
    MILD = 2
    MODERATE = 3


NUM_CLASSES = len(ClassLabel)

# Clinical Dementia Rating stages map one-to-one onto the class labels.
_CDR_TO_CLASS = {
    0.0: ClassLabel.NONDEMENTED,
    0.5: ClassLabel.VERY_MILD,
    1.0: ClassLabel.MILD,
    2.0: ClassLabel.MODERATE,
}

VALID_CDR_VALUES = tuple(sorted(_CDR_TO_CLASS))


def cdr_to_class(cdr: float) -> ClassLabel:
    """Map a CDR score (0, 0.5, 1 or 2) to its stage label.

    Raises UnknownRating for any other value.
    """
    try:
        return _CDR_TO_CLASS[float(cdr)]
    except (KeyError, TypeError, ValueError):
        raise UnknownRating(f"CDR must be one of {VALID_CDR_VALUES}, got {cdr!r}") from None


def class_to_cdr(label: ClassLabel) -> float:
    """Inverse of cdr_to_class; used when writing synthetic metadata."""
    for cdr, cls in _CDR_TO_CLASS.items():
        if cls == label:
            return cdr
    raise UnknownRating(f"no CDR stage for {label!r}")
