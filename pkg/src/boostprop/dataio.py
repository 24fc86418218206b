"""Readers and writers for every on-disk artifact.

Formats owned here: VOC-style XML annotations, PPM/PGM images, dataset
manifests, blacklists, the CFBK filter-bank container, model and regressor
JSON files, and tab-separated proposal files.
"""

from __future__ import annotations

import hashlib
import json
import struct
import xml.parsers.expat
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channels import FilterBank, ImagePlanes
from .errors import FormatError, ParseError
from .geometry import Box, ScoredBox

CFBK_MAGIC = b"CFBK"
CFBK_VERSION = 1
MODEL_FORMAT = "boostprop-model"
REGRESSOR_FORMAT = "boostprop-regressor"


@dataclass(frozen=True)
class Annotation:
    """Ground-truth objects for one image."""

    image_id: str
    width: int
    height: int
    boxes: list
    class_names: list
    difficult: list  # parallel booleans

    def __post_init__(self):
        if not len(self.boxes) == len(self.class_names) == len(self.difficult):
            raise ParseError("annotation lists must have equal length")


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered (image path, annotation path) pairs for one split."""

    entries: list  # of (Path, Path)
    split: str = ""

    @property
    def image_ids(self) -> list:
        return [p.stem for p, _ in self.entries]


# ---------------------------------------------------------------------------
# VOC XML


class _Node:
    __slots__ = ("tag", "line", "children", "text")

    def __init__(self, tag, line):
        self.tag = tag
        self.line = line
        self.children = []
        self.text = []


def _build_tree(data: bytes) -> _Node:
    parser = xml.parsers.expat.ParserCreate()
    root = _Node("", 0)
    stack = [root]

    def start(tag, _attrs):
        node = _Node(tag, parser.CurrentLineNumber)
        stack[-1].children.append(node)
        stack.append(node)

    def end(_tag):
        stack.pop()

    def chars(text):
        stack[-1].text.append(text)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as exc:
        raise ParseError(str(exc), element_path="/", line=exc.lineno) from None
    if not root.children:
        raise ParseError("empty document", element_path="/", line=1)
    return root.children[0]


def _child(node: _Node, tag: str):
    for c in node.children:
        if c.tag == tag:
            return c
    return None

def _require(node: _Node, tag: str, path: str) -> _Node:
    c = _child(node, tag)
    if c is None:
        raise ParseError(f"missing element <{tag}>", element_path=path, line=node.line)
    return c


def _text(node: _Node) -> str:
    return "".join(node.text).strip()


def _number(node: _Node, path: str) -> float:
    raw = _text(node)
    try:
        return float(raw)
    except ValueError:
        raise ParseError(
            f"expected a number, got {raw!r}", element_path=path, line=node.line
        ) from None


def parse_voc_xml(data: bytes) -> Annotation:
    """Parse a VOC-subset annotation document.

    Sibling order is not assumed and unknown elements are ignored. The
    1-based inclusive pixel corners map to half-open (xmin-1, ymin-1,
    xmax, ymax); inverted boxes are an error, out-of-range corners are
    clamped to the declared image size.
    """
    root = _build_tree(data)
    if root.tag != "annotation":
        raise ParseError(
            f"expected <annotation> root, got <{root.tag}>",
            element_path="/" + root.tag,
            line=root.line,
        )
    filename = _require(root, "filename", "annotation")
    size = _require(root, "size", "annotation")
    width = int(_number(_require(size, "width", "annotation/size"), "annotation/size/width"))
    height = int(
        _number(_require(size, "height", "annotation/size"), "annotation/size/height")
    )
    if width <= 0 or height <= 0:
        raise ParseError(
            f"non-positive image size {width}x{height}",
            element_path="annotation/size",
            line=size.line,
        )
    boxes, names, difficult = [], [], []
    obj_idx = 0
    for child in root.children:
        if child.tag != "object":
            continue
        path = f"annotation/object[{obj_idx}]"
        obj_idx += 1
        name_node = _child(child, "name")
        names.append(_text(name_node) if name_node is not None else "")
        diff_node = _child(child, "difficult")
        difficult.append(
            bool(int(_number(diff_node, path + "/difficult")))
            if diff_node is not None
            else False
        )
        bnd = _require(child, "bndbox", path)
        vals = {}
        for tag in ("xmin", "ymin", "xmax", "ymax"):
            vals[tag] = _number(_require(bnd, tag, path + "/bndbox"), f"{path}/bndbox/{tag}")
        if vals["xmax"] <= vals["xmin"] or vals["ymax"] <= vals["ymin"]:
            raise ParseError(
                "inverted or empty box "
                f"({vals['xmin']},{vals['ymin']},{vals['xmax']},{vals['ymax']})",
                element_path=path + "/bndbox",
                line=bnd.line,
            )
        x1 = min(max(vals["xmin"] - 1.0, 0.0), width)
        y1 = min(max(vals["ymin"] - 1.0, 0.0), height)
        x2 = min(max(vals["xmax"], 0.0), width)
        y2 = min(max(vals["ymax"], 0.0), height)
        if x2 <= x1 or y2 <= y1:
            raise ParseError(
                "box lies entirely outside the image",
                element_path=path + "/bndbox",
                line=bnd.line,
            )
        boxes.append(Box(x1, y1, x2, y2))
    image_id = Path(_text(filename)).stem
    return Annotation(image_id, width, height, boxes, names, difficult)


# ---------------------------------------------------------------------------
# PPM / PGM images


def _pnm_tokens(data: bytes, count: int, start: int):
    """Read `count` whitespace-separated header tokens, honoring # comments.

    Returns (tokens, offset_after_single_trailing_whitespace).
    """
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        if j == i:
            raise FormatError("truncated header", offset=i)
        tokens.append(data[i:j])
        i = j
    if i >= n:
        raise FormatError("missing payload", offset=i)
    return tokens, i + 1  # exactly one whitespace byte separates header and payload


def load_image(path) -> ImagePlanes:
    """Load a binary PPM (P6) or PGM (P5) file with maxval 255 into [0,1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P6", b"P5"):
        raise FormatError(
            f"unsupported magic {magic!r}; only binary PPM (P6) and PGM (P5) are "
            "supported — convert other formats first (e.g. with ImageMagick)",
            offset=0,
        )
    planes_n = 3 if magic == b"P6" else 1
    tokens, payload_at = _pnm_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("non-numeric header field", offset=2) from None
    if width <= 0 or height <= 0:
        raise FormatError(f"bad dimensions {width}x{height}", offset=2)
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", offset=2)
    expected = width * height * planes_n
    payload = data[payload_at:]
    if len(payload) != expected:
        raise FormatError(
            f"payload has {len(payload)} bytes, expected {expected}",
            offset=payload_at,
        )
    raw = np.frombuffer(payload, dtype=np.uint8)
    if planes_n == 3:
        planes = raw.reshape(height, width, 3).transpose(2, 0, 1)
    else:
        planes = raw.reshape(1, height, width)
    return ImagePlanes(planes.astype(np.float64) / 255.0)


def write_image(path, planes: ImagePlanes, comment: str | None = None) -> None:
    """Write ImagePlanes as binary PPM (3 planes) or PGM (1 plane).

    An optional single-line comment is embedded in the header.
    """
    arr = np.clip(np.rint(planes.planes * 255.0), 0, 255).astype(np.uint8)
    c, h, w = arr.shape
    magic = b"P6" if c == 3 else b"P5"
    note = b"# " + comment.encode() + b"\n" if comment else b""
    body = arr.transpose(1, 2, 0).tobytes() if c == 3 else arr[0].tobytes()
    Path(path).write_bytes(magic + b"\n" + note + b"%d %d\n255\n" % (w, h) + body)


# ---------------------------------------------------------------------------
# CFBK filter banks


def cfbk_bytes(bank: FilterBank) -> bytes:
    """Serialize a filter bank to the CFBK container format."""
    head = CFBK_MAGIC + struct.pack(
        "<5I", CFBK_VERSION, bank.count, bank.cin, bank.kh, bank.kw
    )
    biases = bank.biases.astype("<f4").tobytes()
    weights = np.ascontiguousarray(bank.weights, dtype="<f4").tobytes()
    return head + biases + weights


def write_cfbk(bank: FilterBank, path) -> None:
    Path(path).write_bytes(cfbk_bytes(bank))


def read_cfbk(path) -> FilterBank:
    data = Path(path).read_bytes()
    if data[:4] != CFBK_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {CFBK_MAGIC!r}", offset=0)
    if len(data) < 24:
        raise FormatError("truncated header", offset=len(data))
    version, count, cin, kh, kw = struct.unpack_from("<5I", data, 4)
    if version != CFBK_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if count < 1 or cin < 1 or kh < 1 or kw < 1:
        raise FormatError("non-positive dimension in header", offset=8)
    bias_end = 24 + 4 * count
    weights_end = bias_end + 4 * count * cin * kh * kw
    if len(data) < weights_end:
        raise FormatError(
            f"payload has {len(data) - 24} bytes, expected {weights_end - 24}",
            offset=len(data),
        )
    if len(data) > weights_end:
        raise FormatError("trailing bytes after payload", offset=weights_end)
    biases = np.frombuffer(data, dtype="<f4", count=count, offset=24)
    weights = np.frombuffer(
        data, dtype="<f4", count=count * cin * kh * kw, offset=bias_end
    ).reshape(count, cin, kh, kw)
    return FilterBank(
        weights=weights.astype(np.float64),
        biases=biases.astype(np.float64),
        provenance=f"file({Path(path).name})",
    )


def bank_fingerprint(bank: FilterBank) -> str:
    """sha256 hex digest of the bank's CFBK serialization."""
    return hashlib.sha256(cfbk_bytes(bank)).hexdigest()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Model files (JSON)


def save_model(model, path) -> None:
    rows = [
        [
            tr.features[0],
            tr.thresholds[0],
            tr.features[1],
            tr.thresholds[1],
            tr.features[2],
            tr.thresholds[2],
            *tr.leaves,
        ]
        for tr in model.trees
    ]
    doc = {
        "format": MODEL_FORMAT,
        "version": 1,
        "d": model.d,
        "channels": model.channel_count,
        "shrink": model.shrink,
        "bank_fingerprint": model.bank_fingerprint,
        "meta": model.meta,
        "trees": rows,
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n")


def load_model(path):
    from .boost import BoostedModel, DepthTwoTree

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), element_path=str(path), line=exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"not a {MODEL_FORMAT} file", element_path=str(path))
    if doc.get("version") != 1:
        raise ParseError(
            f"unsupported version {doc.get('version')!r}", element_path=str(path)
        )
    trees = []
    for i, row in enumerate(doc["trees"]):
        if len(row) != 10:
            raise ParseError(
                f"tree row has {len(row)} fields, expected 10",
                element_path=f"trees[{i}]",
            )
        trees.append(
            DepthTwoTree(
                features=(int(row[0]), int(row[2]), int(row[4])),
                thresholds=(float(row[1]), float(row[3]), float(row[5])),
                leaves=tuple(float(v) for v in row[6:10]),
            )
        )
    return BoostedModel(
        trees=trees,
        d=int(doc["d"]),
        channel_count=int(doc["channels"]),
        shrink=int(doc["shrink"]),
        bank_fingerprint=str(doc["bank_fingerprint"]),
        meta=doc.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# Regressor files (JSON)


def save_regressor(reg, path) -> None:
    doc = {
        "format": REGRESSOR_FORMAT,
        "version": 1,
        "lambda": reg.ridge_lambda,
        "mean": reg.mean.tolist(),
        "scale": reg.scale.tolist(),
        "weights": reg.weights.tolist(),
        "bias": reg.bias.tolist(),
        "meta": reg.meta,
    }
    Path(path).write_text(json.dumps(doc, indent=None, separators=(",", ":")) + "\n")


def load_regressor(path):
    from .regress import BoxRegressor

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), element_path=str(path), line=exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != REGRESSOR_FORMAT:
        raise ParseError(f"not a {REGRESSOR_FORMAT} file", element_path=str(path))
    if doc.get("version") != 1:
        raise ParseError(
            f"unsupported version {doc.get('version')!r}", element_path=str(path)
        )
    return BoxRegressor(
        weights=np.asarray(doc["weights"], dtype=np.float64),
        bias=np.asarray(doc["bias"], dtype=np.float64),
        mean=np.asarray(doc["mean"], dtype=np.float64),
        scale=np.asarray(doc["scale"], dtype=np.float64),
        ridge_lambda=float(doc["lambda"]),
        meta=doc.get("meta", {}),
    )


# ---------------------------------------------------------------------------
# Proposals, manifests, blacklists


def write_proposals(path, by_image: dict, header: dict | None = None) -> None:
    """Write proposals as TSV rows image_id, x1, y1, x2, y2, score.

    Coordinates are written at 4 decimals, scores at full precision.
    Rows are sorted by descending score within each image (stable).
    `header` key/value pairs become leading `# key: value` lines.
    """
    lines = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}: {value}")
    for image_id, props in by_image.items():
        order = sorted(range(len(props)), key=lambda i: (-props[i].score, i))
        for i in order:
            p = props[i]
            b = p.box
            lines.append(
                f"{image_id}\t{b.x1:.4f}\t{b.y1:.4f}\t{b.x2:.4f}\t{b.y2:.4f}\t"
                f"{p.score!r}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_proposals(path) -> dict:
    """Read a proposals file back into {image_id: [ScoredBox, ...]}."""
    by_image: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise ParseError(
                f"expected 6 tab-separated fields, got {len(fields)}",
                element_path=str(path),
                line=lineno,
            )
        image_id = fields[0]
        try:
            x1, y1, x2, y2, s = (float(v) for v in fields[1:])
        except ValueError:
            raise ParseError(
                "non-numeric field", element_path=str(path), line=lineno
            ) from None
        by_image.setdefault(image_id, []).append(ScoredBox(Box(x1, y1, x2, y2), s))
    return by_image


def read_manifest(path) -> DatasetManifest:
    """Read TAB-separated `image_path<TAB>annotation_path` lines.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries = []
    seen = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ParseError(
                f"expected 2 tab-separated fields, got {len(fields)}",
                element_path=str(path),
                line=lineno,
            )
        img = base / fields[0] if not Path(fields[0]).is_absolute() else Path(fields[0])
        ann = base / fields[1] if not Path(fields[1]).is_absolute() else Path(fields[1])
        image_id = img.stem
        if image_id in seen:
            raise ParseError(
                f"duplicate image id {image_id!r} (first at line {seen[image_id]})",
                element_path=str(path),
                line=lineno,
            )
        seen[image_id] = lineno
        entries.append((img, ann))
    return DatasetManifest(entries=entries, split=path.stem)


def read_blacklist(path) -> set:
    """One image_id per line; blanks and # comments ignored."""
    ids = set()
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line and not line.startswith("#"):
            ids.add(line)
    return ids
