"""Synthetic co-occurrence scenes, the on-disk dataset layout, and a PGM/PPM codec.

Each scene class is defined by a *pair* of required shapes, and every shape
kind is required by at least two classes, so no single object identifies
the class. Distractor clutter comes from kinds that no class requires.

Dataset directory::

    images/00000.pgm ...   binary PGM (P5) or PPM (P6), maxval 255
    manifest.csv           filename,class_id
    boxes.csv              filename,x0,y0,x1,y1   (one line per object)
    spec.txt               key=value SceneSpec
"""

from dataclasses import dataclass, field, fields
from itertools import product
from pathlib import Path

import numpy as np

from contextcnn.boxes import Box

SHAPE_KINDS = ("circle", "square", "triangle", "cross", "bar", "ring")
DEFAULT_REQUIRED = (("circle", "square"), ("circle", "triangle"), ("square", "cross"), ("triangle", "cross"))


class SpecError(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    num_classes: int = 4
    shapes: tuple = SHAPE_KINDS
    required: tuple = DEFAULT_REQUIRED
    distractor_shapes: tuple = ("bar", "ring")
    distractors: tuple = (2, 4)
    noise: float = 0.15
    image_size: int = 64
    channels: int = 1
    object_size: tuple = (12, 20)
    distractor_size: tuple = (8, 16)
    object_intensity: tuple = (0.5, 1.0)
    distractor_intensity: tuple = (0.4, 0.9)
    seed: int = 0

    def validate(self):
        if len(self.required) != self.num_classes:
            raise SpecError(f"{len(self.required)} required sets for {self.num_classes} classes")
        sets = [frozenset(r) for r in self.required]
        if len(set(sets)) != len(sets):
            raise SpecError("required object sets must be pairwise distinct")
        vocab = set(self.shapes)
        for kind in set().union(*sets) | set(self.distractor_shapes):
            if kind not in vocab:
                raise SpecError(f"shape {kind!r} is not in the vocabulary")
        overlap = set().union(*sets) & set(self.distractor_shapes)
        if overlap:
            raise SpecError(f"distractor kinds {sorted(overlap)} are also required by a class")
        for kind in self.object_kinds:
            users = sum(kind in s for s in sets)
            if users < 2:
                raise SpecError(f"shape {kind!r} is required by {users} class(es); needs >= 2")
        if self.channels not in (1, 3):
            raise SpecError("channels must be 1 (PGM) or 3 (PPM)")
        return self

    @property
    def object_kinds(self):
        """Vocabulary kinds available to required sets (everything but distractor kinds)."""
        return tuple(k for k in self.shapes if k not in self.distractor_shapes)

    def dumps(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "required":
                v = ";".join("+".join(r) for r in v)
            elif isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text):
        raw = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        kw = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            v = raw[f.name].strip()
            if f.name == "required":
                kw[f.name] = tuple(tuple(r.split("+")) for r in v.split(";") if r)
            elif f.name in ("shapes", "distractor_shapes"):
                kw[f.name] = tuple(x for x in v.split(",") if x)
            elif f.name in ("distractors", "object_size", "distractor_size"):
                kw[f.name] = tuple(int(x) for x in v.split(","))
            elif f.name in ("object_intensity", "distractor_intensity"):
                kw[f.name] = tuple(float(x) for x in v.split(","))
            elif f.name == "noise":
                kw[f.name] = float(v)
            else:
                kw[f.name] = int(v)
        return cls(**kw)


@dataclass
class SceneSample:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    class_id: int
    gt_boxes: list
    kinds: list = field(default_factory=list)  # analysis only, never on disk
    name: str = ""


def shape_mask(kind, size, rng):
    """Boolean mask of a shape drawn in a ``size`` x ``size`` canvas."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    half = size / 2.0
    r2 = (xx - half) ** 2 + (yy - half) ** 2
    if kind == "square":
        return np.ones((size, size), dtype=bool)
    if kind == "circle":
        return r2 <= half ** 2
    if kind == "ring":
        inner = half - max(2.0, size / 5.0)
        return (r2 <= half ** 2) & (r2 > inner ** 2)
    if kind == "triangle":
        return np.abs(xx - half) <= yy / 2.0
    if kind == "cross":
        t = max(2, round(size / 3))
        lo = (size - t) // 2
        band = (np.arange(size) >= lo) & (np.arange(size) < lo + t)
        return band[:, None] | band[None, :]
    if kind == "bar":
        m = np.zeros((size, size), dtype=bool)
        t = max(2, size // 4)
        lo = (size - t) // 2
        if rng.random() < 0.5:
            m[lo:lo + t, :] = True
        else:
            m[:, lo:lo + t] = True
        return m
    raise SpecError(f"unknown shape kind {kind!r}")


def _overlaps(box, placed, margin=1):
    return any(box[0] < p[2] + margin and p[0] < box[2] + margin and
               box[1] < p[3] + margin and p[1] < box[3] + margin for p in placed)


def _place(rng, spec, kind, size_range, intensity_range, image, placed, tries=200):
    n = spec.image_size
    for _ in range(tries):
        size = int(rng.integers(size_range[0], size_range[1] + 1))
        mask = shape_mask(kind, size, rng)
        rows, cols = np.nonzero(mask)
        h = rows.max() - rows.min() + 1
        w = cols.max() - cols.min() + 1
        mask = mask[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
        x = int(rng.integers(0, n - w + 1))
        y = int(rng.integers(0, n - h + 1))
        rect = (x, y, x + w, y + h)
        if _overlaps(rect, placed):
            continue
        value = rng.uniform(*intensity_range)
        region = image[:, y:y + h, x:x + w]
        np.maximum(region, value * mask, out=region)
        placed.append(rect)
        return Box(float(x), float(y), float(x + w), float(y + h), 1.0)
    return None


def generate_scene(spec, class_id, rng_seed):
    """Render one scene of ``class_id``; bit-identical for identical arguments."""
    spec.validate()
    if not 0 <= class_id < spec.num_classes:
        raise SpecError(f"class_id {class_id} out of range for {spec.num_classes} classes")
    rng = np.random.default_rng(rng_seed)
    n = spec.image_size
    image = np.zeros((spec.channels, n, n), dtype=np.float64)
    placed, boxes, kinds = [], [], []
    required = list(spec.required[class_id])
    rng.shuffle(required)
    for kind in required:
        box = None
        while box is None:
            box = _place(rng, spec, kind, spec.object_size, spec.object_intensity, image, placed)
        boxes.append(box)
        kinds.append(kind)
    lo, hi = spec.distractors
    for _ in range(int(rng.integers(lo, hi + 1))):
        kind = spec.distractor_shapes[int(rng.integers(len(spec.distractor_shapes)))]
        box = _place(rng, spec, kind, spec.distractor_size, spec.distractor_intensity, image, placed)
        if box is not None:
            boxes.append(box)
            kinds.append(kind)
    if spec.noise > 0:
        image = np.clip(image + spec.noise * rng.random(image.shape), 0.0, 1.0)
    return SceneSample(image.astype(np.float32), class_id, boxes, kinds)


def generate_dataset(spec, count, base_seed=None, offset=0):
    """``count`` class-balanced samples; sample i uses seed ``base_seed + offset + i``."""
    base = spec.seed if base_seed is None else base_seed
    samples = []
    for i in range(offset, offset + count):
        s = generate_scene(spec, i % spec.num_classes, base + i)
        s.name = f"{i:05d}"
        samples.append(s)
    return samples


# -- presence-oracle ceiling ---------------------------------------------------


def incidence_table(spec):
    """{kind: tuple of 0/1 per class} over required sets and distractor kinds."""
    kinds = list(spec.object_kinds) + list(spec.distractor_shapes)
    return {k: tuple(int(k in spec.required[c]) for c in range(spec.num_classes)) for k in kinds}


def single_object_ceiling(spec, samples=None):
    """Best accuracy of any classifier that sees one shape kind's presence bit.

    Brute force over every kind and every mapping {absent, present} -> class.
    Without ``samples`` the accuracy is taken under a uniform class prior on
    the incidence table (distractor kinds only ever tell "unknown").
    """
    k = spec.num_classes
    if samples is None:
        table = incidence_table(spec)
        rows = [(c, {kind for kind, bits in table.items() if bits[c]}) for c in range(k)]
        weights = [1.0 / k] * k
    else:
        rows = [(s.class_id, set(s.kinds)) for s in samples]
        weights = [1.0 / len(samples)] * len(samples)
    best = 0.0
    for kind in list(spec.object_kinds) + list(spec.distractor_shapes):
        for absent_cls, present_cls in product(range(k), repeat=2):
            acc = 0.0
            for (cls, present), w in zip(rows, weights):
                guess = present_cls if kind in present else absent_cls
                acc += w * (guess == cls)
            best = max(best, acc)
    return best


# -- PGM / PPM codec -----------------------------------------------------------


def quantize(image):
    """[0, 1] floats to uint8 with round-half-up."""
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(pixels):
    """uint8 (H, W) -> P5 bytes, (H, W, 3) -> P6 bytes."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot encode array of shape {pixels.shape} as PGM/PPM")
    h, w = pixels.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pnm(blob, label="<bytes>"):
    """Parse binary PGM/PPM bytes into uint8 (H, W) or (H, W, 3)."""
    if blob[:2] not in (b"P5", b"P6"):
        raise ParseError(f"{label}: byte 0: expected P5 or P6 magic")
    channels = 1 if blob[:2] == b"P5" else 3
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(blob) and (chr(blob[pos]).isspace() or blob[pos:pos + 1] == b"#"):
            if blob[pos:pos + 1] == b"#":
                while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                    pos += 1
            pos += 1
        start = pos
        while pos < len(blob) and chr(blob[pos]).isdigit():
            pos += 1
        if start == pos:
            raise ParseError(f"{label}: byte {pos}: expected a header integer")
        values.append(int(blob[start:pos]))
    if pos >= len(blob) or not chr(blob[pos]).isspace():
        raise ParseError(f"{label}: byte {pos}: expected whitespace after header")
    pos += 1
    w, h, maxval = values
    if not 0 < maxval <= 255:
        raise ParseError(f"{label}: byte {pos}: unsupported maxval {maxval}")
    need = w * h * channels
    if len(blob) - pos < need:
        raise ParseError(f"{label}: byte {pos}: raster needs {need} bytes, found {len(blob) - pos}")
    raster = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos)
    return raster.reshape((h, w) if channels == 1 else (h, w, 3)).copy()


def write_image(path, image):
    """Write a (C, H, W) float image in [0, 1] as PGM (C=1) or PPM (C=3)."""
    q = quantize(image)
    pixels = q[0] if q.shape[0] == 1 else q.transpose(1, 2, 0)
    Path(path).write_bytes(encode_pnm(pixels))


def read_image(path):
    """Read a PGM/PPM file into a (C, H, W) float32 image in [0, 1]."""
    pixels = decode_pnm(Path(path).read_bytes(), label=str(path))
    arr = pixels[None] if pixels.ndim == 2 else pixels.transpose(2, 0, 1)
    return (arr.astype(np.float32) / np.float32(255.0))


# -- dataset directories -------------------------------------------------------


def _fmt(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_dataset(samples, directory, spec=None):
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    manifest, boxes = [], []
    for i, s in enumerate(samples):
        ext = "pgm" if s.image.shape[0] == 1 else "ppm"
        fname = f"{s.name or f'{i:05d}'}.{ext}"
        write_image(directory / "images" / fname, s.image)
        manifest.append(f"{fname},{s.class_id}\n")
        boxes.extend(f"{fname},{','.join(_fmt(v) for v in b.coords())}\n" for b in s.gt_boxes)
    (directory / "manifest.csv").write_text("".join(manifest), encoding="ascii", newline="\n")
    (directory / "boxes.csv").write_text("".join(boxes), encoding="ascii", newline="\n")
    if spec is not None:
        (directory / "spec.txt").write_text(spec.dumps(), encoding="ascii", newline="\n")


def read_spec(directory):
    path = Path(directory) / "spec.txt"
    return SceneSpec.loads(path.read_text(encoding="ascii")) if path.exists() else None


def read_dataset(directory):
    directory = Path(directory)
    manifest = directory / "manifest.csv"
    if not manifest.exists():
        raise ParseError(f"{manifest}: missing manifest")
    gt = {}
    boxes_path = directory / "boxes.csv"
    if boxes_path.exists():
        offset = 0
        for line in boxes_path.read_bytes().decode("ascii").splitlines(keepends=True):
            parts = line.strip().split(",")
            if len(parts) != 5:
                raise ParseError(f"{boxes_path}: byte {offset}: expected filename,x0,y0,x1,y1")
            gt.setdefault(parts[0], []).append(Box(*(float(v) for v in parts[1:]), 1.0))
            offset += len(line)
    samples = []
    offset = 0
    for line in manifest.read_bytes().decode("ascii").splitlines(keepends=True):
        parts = line.strip().split(",")
        if len(parts) != 2 or not parts[1].lstrip("-").isdigit():
            raise ParseError(f"{manifest}: byte {offset}: expected filename,class_id")
        fname = parts[0]
        image_path = directory / "images" / fname
        if not image_path.exists():
            raise ParseError(f"{manifest}: byte {offset}: referenced image {fname!r} not found")
        samples.append(SceneSample(read_image(image_path), int(parts[1]), gt.get(fname, []),
                                   name=Path(fname).stem))
        offset += len(line)
    return samples


def stack_images(samples):
    return np.stack([s.image for s in samples]).astype(np.float32)
