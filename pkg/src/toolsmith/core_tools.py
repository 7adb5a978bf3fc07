"""The fixed core tool set: contracts, argument validation, and deterministic
mock backends.

The four core tools (region cropping, visual search, external text retrieval,
web page visits) are interface contracts here; vision and search backends are
external services in production, so the shipped backends answer from a
read-only fixture corpus. That keeps every test hermetic: a mock call is a
pure function of (fixtures, arguments).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence


class ToolBackendError(RuntimeError):
    """Base class for core-tool backend failures; rendered as error observations."""


class OutOfBounds(ToolBackendError):
    pass


class UnknownCategory(ToolBackendError):
    pass


class FixtureMiss(ToolBackendError):
    pass


class FetchFailure(ToolBackendError):
    pass


class SchemaViolation(ValueError):
    """Arguments do not conform to a tool's invocation schema."""


SEARCH_CATEGORIES = (
    "plant",
    "animal",
    "car",
    "person",
    "landmark",
    "vegetable",
    "cuisine",
    "logo",
)


@dataclass(frozen=True)
class ArgSpec:
    type: str
    required: bool = True
    description: str = ""
    enum: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    schema: Mapping[str, ArgSpec]


@dataclass(frozen=True)
class BoundingBox:
    """Pixel rectangle with (x1, y1) the top-left and (x2, y2) the
    bottom-right corner."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        if min(self.x1, self.y1, self.x2, self.y2) < 0:
            raise OutOfBounds(f"negative coordinate in {self.as_tuple()}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise OutOfBounds(
                f"box {self.as_tuple()} must satisfy x1 < x2 and y1 < y2"
            )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1


_TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "array": lambda v: isinstance(v, (list, tuple)),
    "object": lambda v: isinstance(v, dict),
}


def validate_args(schema: Mapping[str, ArgSpec], args: Mapping[str, Any]) -> None:
    """Reject argument maps that do not conform to the schema, before any
    backend or process is touched."""
    for name, spec in schema.items():
        if name not in args:
            if spec.required:
                raise SchemaViolation(f"missing required argument '{name}'")
            continue
        value = args[name]
        check = _TYPE_CHECKS.get(spec.type)
        if check is not None and not check(value):
            raise SchemaViolation(
                f"argument '{name}' expects {spec.type}, got {type(value).__name__}"
            )
        if spec.enum is not None and value not in spec.enum:
            raise SchemaViolation(
                f"argument '{name}' must be one of {sorted(spec.enum)}, got {value!r}"
            )
    unknown = set(args) - set(schema)
    if unknown:
        raise SchemaViolation(f"unknown arguments: {sorted(unknown)}")


CORE_TOOLS: tuple[ToolDescriptor, ...] = (
    ToolDescriptor(
        name="region_crop",
        description=(
            "Zoom into a specific area of the first input image based on the "
            "provided bounding box, returning a new image."
        ),
        schema={
            "image": ArgSpec("string", description="identifier of the input image"),
            "bbox": ArgSpec(
                "array",
                description=(
                    "[x1, y1, x2, y2]; (x1, y1) is the top-left corner, "
                    "(x2, y2) the bottom-right corner"
                ),
            ),
        },
    ),
    ToolDescriptor(
        name="visual_search",
        description=(
            "Retrieve similar images for the provided bounding box area of the "
            "first input image, returning only the most similar target's type "
            "name and the confidence score."
        ),
        schema={
            "image": ArgSpec("string", description="identifier of the input image"),
            "bbox_2d": ArgSpec(
                "array",
                description=(
                    "[x1, y1, x2, y2]; (x1, y1) is the top-left corner, "
                    "(x2, y2) the bottom-right corner"
                ),
            ),
            "category": ArgSpec(
                "string",
                description="category of the image to search for",
                enum=SEARCH_CATEGORIES,
            ),
        },
    ),
    ToolDescriptor(
        name="external_text_retrieval",
        description=(
            "Retrieve external text information from the internet based on the "
            "provided text query."
        ),
        schema={
            "query": ArgSpec("string", description="the content to search for"),
        },
    ),
    ToolDescriptor(
        name="web_visit",
        description=(
            "Visit a specified web page URL under 3 modes: read its full "
            "content, read the content within the provided window, or generate "
            "a structured summary for a specific goal."
        ),
        schema={
            "url": ArgSpec("string", description="the webpage url to visit"),
            "window": ArgSpec(
                "array",
                required=False,
                description="[a, b] character range of the content to read",
            ),
            "goal": ArgSpec(
                "string", required=False, description="what to get or find"
            ),
        },
    ),
)


def core_descriptor_map() -> dict[str, ToolDescriptor]:
    return {tool.name: tool for tool in CORE_TOOLS}


@dataclass
class FixtureStore:
    """Read-only corpus backing the mock tool backends.

    On disk the corpus is a directory of keyed JSON files: ``images.json``
    (image id to width/height), ``visual_search.json`` (records keyed by
    image id and bounding box), ``retrieval.json`` (query to text) and
    ``pages.json`` (url to page content).
    """

    images: dict[str, tuple[int, int]] = field(default_factory=dict)
    visual: dict[tuple[str, tuple[int, int, int, int]], tuple[str, float]] = field(
        default_factory=dict
    )
    retrieval: dict[str, str] = field(default_factory=dict)
    pages: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dir(cls, root: Path | str) -> "FixtureStore":
        root = Path(root)
        store = cls()
        images = _load_json(root / "images.json", {})
        store.images = {k: (int(v["width"]), int(v["height"])) for k, v in images.items()}
        for rec in _load_json(root / "visual_search.json", []):
            key = (rec["image"], tuple(int(c) for c in rec["bbox"]))
            store.visual[key] = (rec["label"], float(rec["confidence"]))
        store.retrieval = {
            _norm_query(k): v for k, v in _load_json(root / "retrieval.json", {}).items()
        }
        store.pages = dict(_load_json(root / "pages.json", {}))
        return store


def _load_json(path: Path, default: Any) -> Any:
    if not path.exists():
        return default
    return json.loads(path.read_text(encoding="utf-8"))


def _norm_query(query: str) -> str:
    return " ".join(query.lower().split())


class CoreToolset:
    """Dispatches core tool invocations to their mock (or optional live)
    backends after schema validation."""

    def __init__(
        self,
        fixtures: FixtureStore | None = None,
        *,
        summarizer: Callable[[str, str], str] | None = None,
        fetcher: Callable[[str], str] | None = None,
    ) -> None:
        self.fixtures = fixtures or FixtureStore()
        self.summarizer = summarizer
        self.fetcher = fetcher
        self._descriptors = core_descriptor_map()

    def descriptors(self) -> dict[str, ToolDescriptor]:
        return dict(self._descriptors)

    def dispatch(self, name: str, args: Mapping[str, Any]) -> str:
        """Validate arguments and run the named core tool, returning the
        observation text."""
        descriptor = self._descriptors[name]
        validate_args(descriptor.schema, args)
        if name == "region_crop":
            result = self.crop_zoom(args["image"], _to_bbox(args["bbox"]))
        elif name == "visual_search":
            label, confidence = self.visual_search(
                args["image"], _to_bbox(args["bbox_2d"]), args["category"]
            )
            result = {"label": label, "confidence": confidence}
        elif name == "external_text_retrieval":
            return self.text_retrieval(args["query"])
        elif name == "web_visit":
            result = self.web_visit(
                args["url"], window=args.get("window"), goal=args.get("goal")
            )
        else:  # pragma: no cover - descriptor map is closed
            raise KeyError(name)
        return json.dumps(result, sort_keys=True, ensure_ascii=False)

    def crop_zoom(self, image: str, bbox: BoundingBox) -> dict[str, Any]:
        if image not in self.fixtures.images:
            raise FixtureMiss(f"unknown image '{image}'")
        width, height = self.fixtures.images[image]
        if bbox.x2 > width or bbox.y2 > height:
            raise OutOfBounds(
                f"box {bbox.as_tuple()} exceeds image bounds {width}x{height}"
            )
        coords = bbox.as_tuple()
        region_hash = hashlib.sha256(
            f"{image}:{coords[0]}:{coords[1]}:{coords[2]}:{coords[3]}".encode("utf-8")
        ).hexdigest()[:16]
        return {
            "image": f"{image}@{coords[0]},{coords[1]},{coords[2]},{coords[3]}",
            "width": bbox.width,
            "height": bbox.height,
            "region_hash": region_hash,
        }

    def visual_search(
        self, image: str, bbox: BoundingBox, category: str
    ) -> tuple[str, float]:
        if category not in SEARCH_CATEGORIES:
            raise UnknownCategory(
                f"category '{category}' not in {sorted(SEARCH_CATEGORIES)}"
            )
        hit = self.fixtures.visual.get((image, bbox.as_tuple()))
        if hit is None:
            return ("unknown", 0.0)
        return hit

    def text_retrieval(self, query: str) -> str:
        if not query:
            raise FixtureMiss("empty query")
        text = self.fixtures.retrieval.get(_norm_query(query))
        if text is not None:
            return text
        if self.fetcher is not None:
            try:
                return self.fetcher(query)
            except Exception as exc:
                raise FetchFailure(str(exc)) from exc
        raise FixtureMiss(f"no fixture for query '{query}'")

    def web_visit(
        self,
        url: str,
        window: Optional[Sequence[int]] = None,
        goal: Optional[str] = None,
    ) -> dict[str, Any]:
        if not url:
            raise FetchFailure("empty url")
        content = self.fixtures.pages.get(url)
        if content is None:
            if self.fetcher is not None:
                try:
                    content = self.fetcher(url)
                except Exception as exc:
                    raise FetchFailure(str(exc)) from exc
            else:
                raise FixtureMiss(f"no fixture for url '{url}'")
        if window is not None:
            a, b = int(window[0]), int(window[1])
            if a > b or a < 0:
                raise OutOfBounds(f"window [{a}, {b}] must satisfy 0 <= a <= b")
            return {"url": url, "mode": "window", "content": content[a:b]}
        if goal:
            if self.summarizer is None:
                raise FetchFailure("no summarizer configured for goal mode")
            return {
                "url": url,
                "mode": "goal",
                "content": self.summarizer(goal, content),
            }
        return {"url": url, "mode": "full", "content": content}


def _to_bbox(raw: Sequence[Any]) -> BoundingBox:
    if len(raw) != 4:
        raise SchemaViolation(f"bounding box needs 4 coordinates, got {len(raw)}")
    try:
        coords = [int(c) for c in raw]
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"bounding box coordinates must be integers: {raw!r}") from exc
    return BoundingBox(*coords)
