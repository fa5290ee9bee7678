"""Axis-aligned boxes in image pixel coordinates."""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)`` with a confidence score.

    x runs along image columns, y along rows.
    """

    x0: float
    y0: float
    x1: float
    y1: float
    score: float = 0.0

    @property
    def width(self):
        return self.x1 - self.x0

    @property
    def height(self):
        return self.y1 - self.y0

    @property
    def area(self):
        return max(self.width, 0) * max(self.height, 0)

    def coords(self):
        return (self.x0, self.y0, self.x1, self.y1)

    def with_score(self, score):
        return replace(self, score=float(score))

    def clamp(self, width, height):
        return replace(
            self,
            x0=min(max(self.x0, 0), width),
            y0=min(max(self.y0, 0), height),
            x1=min(max(self.x1, 0), width),
            y1=min(max(self.y1, 0), height),
        )


def iou(a, b):
    """Intersection over union of two boxes (0 when either is empty)."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def sort_by_score(boxes):
    """Stable sort, highest score first; ties keep their input order."""
    return sorted(boxes, key=lambda b: -b.score)


def is_sorted_by_score(boxes):
    return all(boxes[i].score >= boxes[i + 1].score for i in range(len(boxes) - 1))


def pad_boxes(boxes, n):
    """Truncate to ``n`` or pad by repeating the lowest-confidence (last) box."""
    if not boxes:
        raise ValueError("cannot pad an empty proposal list")
    boxes = list(boxes[:n])
    while len(boxes) < n:
        boxes.append(boxes[-1])
    return boxes
