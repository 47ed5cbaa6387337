"""cgroup-style hierarchical scheduling hints."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence


class DuplexMode(enum.Enum):
    ON = "on"
    OFF = "off"
    AUTO = "auto"


HINT_FIELDS = ("expected_read_ratio", "duplex_scheduling", "weight")


@dataclass
class HintGroup:
    name: str
    expected_read_ratio: float | None = None
    duplex_scheduling: DuplexMode | None = None
    weight: float | None = None
    children: dict[str, "HintGroup"] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.duplex_scheduling, str):
            self.duplex_scheduling = DuplexMode(self.duplex_scheduling.lower())
        if self.expected_read_ratio is not None and not 0.0 <= self.expected_read_ratio <= 1.0:
            raise ValueError(f"{self.name}: expected_read_ratio outside [0, 1]")
        if self.weight is not None and not self.weight > 0:
            raise ValueError(f"{self.name}: weight must be > 0")

    def add(self, child: "HintGroup") -> "HintGroup":
        self.children[child.name] = child
        return child


@dataclass(frozen=True)
class EffectiveHint:
    expected_read_ratio: float = 0.5
    duplex_scheduling: DuplexMode = DuplexMode.AUTO
    weight: float = 1.0


class HintTree:
    def __init__(self, root: HintGroup | None = None):
        root = root or HintGroup("root", 0.5, DuplexMode.AUTO, 1.0)
        missing = [f for f in HINT_FIELDS if getattr(root, f) is None]
        if missing:
            raise ValueError(f"root hint group must set {missing}")
        self.root = root

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], name: str = "root") -> "HintTree":
        """Build from nested mappings: group fields plus a ``groups`` sub-table.

        Missing root fields fall back to the global defaults.
        """
        def build(gname: str, d: Mapping[str, Any]) -> HintGroup:
            g = HintGroup(gname, d.get("expected_read_ratio"), d.get("duplex_scheduling"), d.get("weight"))
            for cname, cdata in (d.get("groups") or {}).items():
                g.add(build(cname, cdata))
            return g

        root = build(data.get("name", name), data)
        defaults = EffectiveHint()
        for f in HINT_FIELDS:
            if getattr(root, f) is None:
                setattr(root, f, getattr(defaults, f))
        return cls(root)


def resolve_hint(tree: HintTree, path: Sequence[str]) -> EffectiveHint:
    """Each field takes the deepest value set along ``path`` (root first)."""
    if not path or path[0] != tree.root.name:
        raise KeyError(f"hint path must start at {tree.root.name!r}: {list(path)}")
    node = tree.root
    values = {f: getattr(node, f) for f in HINT_FIELDS}
    for name in path[1:]:
        try:
            node = node.children[name]
        except KeyError:
            raise KeyError(f"unknown hint group {name!r} in path {list(path)}") from None
        for f in HINT_FIELDS:
            v = getattr(node, f)
            if v is not None:
                values[f] = v
    return EffectiveHint(**values)
