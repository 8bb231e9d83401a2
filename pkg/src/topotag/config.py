"""Pipeline configuration bundling all stage parameters, JSON round-trippable."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .decode import DecodeParams
from .regions import FilterParams
from .segment import SegmentationParams


@dataclass
class Config:
    """Defaults match the reference operating point of the detector."""

    segmentation: SegmentationParams = field(default_factory=SegmentationParams)
    filter: FilterParams = field(default_factory=FilterParams)
    decode: DecodeParams = field(default_factory=DecodeParams)
    families: list[int] = field(default_factory=lambda: [4])
    intrinsics_path: str | None = None
    tag_size: float = 0.05
    verbosity: int = 0
    debug_dir: str | None = None

    def to_dict(self) -> dict:
        return {
            "segmentation": vars(self.segmentation).copy(),
            "filter": vars(self.filter).copy(),
            "decode": vars(self.decode).copy(),
            "families": list(self.families),
            "intrinsics_path": self.intrinsics_path,
            "tag_size": self.tag_size,
            "verbosity": self.verbosity,
            "debug_dir": self.debug_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        return cls(
            segmentation=SegmentationParams(**data.get("segmentation", {})),
            filter=FilterParams(**data.get("filter", {})),
            decode=DecodeParams(**data.get("decode", {})),
            families=[int(v) for v in data.get("families", [4])],
            intrinsics_path=data.get("intrinsics_path"),
            tag_size=float(data.get("tag_size", 0.05)),
            verbosity=int(data.get("verbosity", 0)),
            debug_dir=data.get("debug_dir"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
