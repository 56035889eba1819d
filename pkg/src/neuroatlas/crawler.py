"""Dataset directory crawling and layout classification.

A dataset root holds a CLINICAL_VARIABLES subtree (CSV dictionaries and
clinical data) and an IMAGES subtree whose subject directories sit one, two,
or three levels deep. The crawl is deterministic: children are sorted
lexicographically and symbolic links are skipped, so an unchanged tree always
serializes to the same bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    AmbiguousDepth,
    MissingClinicalDir,
    MissingImagesDir,
    PathNotFound,
    PermissionDenied,
)

CLINICAL_DIR_NAME = "CLINICAL_VARIABLES"
IMAGES_DIR_NAME = "IMAGES"

DEFAULT_MAX_DEPTH = 32


@dataclass
class TreeNode:
    name: str
    kind: str  # "dir" | "file"
    size_bytes: int = 0
    children: list["TreeNode"] = field(default_factory=list)

    def child(self, name: str) -> "TreeNode | None":
        for c in self.children:
            if c.name == name:
                return c
        return None

    def iter_files(self):
        """Yield (relative_path, node) for every file below this node."""
        stack = [("", self)]
        while stack:
            prefix, node = stack.pop()
            for c in reversed(node.children):
                path = f"{prefix}/{c.name}" if prefix else c.name
                if c.kind == "file":
                    yield path, c
                else:
                    stack.append((path, c))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "size_bytes": self.size_bytes,
            "children": [c.to_dict() for c in self.children],
        }


@dataclass
class DirectoryTree:
    root_path: str
    root: TreeNode
    truncated_paths: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        """Canonical JSON form: stable key order, children already sorted."""
        doc = {
            "root_path": self.root_path,
            "truncated_paths": sorted(self.truncated_paths),
            "tree": self.root.to_dict(),
        }
        return json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class LayoutDescriptor:
    """Where the clinical and image subtrees live, and how deep subjects sit."""

    clinical_dir: str
    images_dir: str
    sub_levels: int

    def __post_init__(self):
        if self.sub_levels not in (1, 2, 3):
            raise AmbiguousDepth(f"sub_levels must be 1..3, got {self.sub_levels}")


def _crawl_dir(path: Path, name: str, depth: int, max_depth: int, truncated: list[str]) -> TreeNode:
    node = TreeNode(name=name, kind="dir")
    if depth >= max_depth:
        truncated.append(str(path))
        return node
    try:
        entries = sorted(os.scandir(path), key=lambda e: e.name)
    except PermissionError as exc:
        raise PermissionDenied(str(exc)) from exc
    for entry in entries:
        if entry.is_symlink():
            continue
        if entry.is_dir(follow_symlinks=False):
            node.children.append(_crawl_dir(Path(entry.path), entry.name, depth + 1, max_depth, truncated))
        elif entry.is_file(follow_symlinks=False):
            node.children.append(TreeNode(name=entry.name, kind="file", size_bytes=entry.stat().st_size))
    return node


def crawl(root: str | Path, max_depth: int = DEFAULT_MAX_DEPTH) -> DirectoryTree:
    """Walk a dataset root into an in-memory tree.

    Exceeding max_depth truncates (recorded in truncated_paths), it does not
    raise.
    """
    root = Path(root)
    if not root.exists():
        raise PathNotFound(str(root))
    if not root.is_dir():
        raise PathNotFound(f"{root} is not a directory")
    truncated: list[str] = []
    node = _crawl_dir(root, root.name, 0, max_depth, truncated)
    return DirectoryTree(root_path=str(root), root=node, truncated_paths=truncated)


def _leaf_dir_depths(node: TreeNode, depth: int, out: dict[int, int]) -> None:
    subdirs = [c for c in node.children if c.kind == "dir"]
    if depth > 0 and not subdirs:
        out[depth] = out.get(depth, 0) + 1
        return
    for sub in subdirs:
        _leaf_dir_depths(sub, depth + 1, out)


def detect_layout(tree: DirectoryTree, case_sensitive: bool = True) -> LayoutDescriptor:
    """Locate CLINICAL_VARIABLES and IMAGES and measure the subject depth.

    sub_levels is the depth under IMAGES at which leaf directories (the
    subject directories, holding only files) appear; mixed depths raise
    AmbiguousDepth. An IMAGES tree with no directories at all defaults to 1.
    """

    def find(wanted: str) -> TreeNode | None:
        for c in tree.root.children:
            if c.kind != "dir":
                continue
            if c.name == wanted or (not case_sensitive and c.name.lower() == wanted.lower()):
                return c
        return None

    clinical = find(CLINICAL_DIR_NAME)
    if clinical is None:
        raise MissingClinicalDir(f"{tree.root_path} has no {CLINICAL_DIR_NAME} directory")
    images = find(IMAGES_DIR_NAME)
    if images is None:
        raise MissingImagesDir(f"{tree.root_path} has no {IMAGES_DIR_NAME} directory")

    depths: dict[int, int] = {}
    _leaf_dir_depths(images, 0, depths)
    if not depths:
        sub_levels = 1
    elif len(depths) > 1:
        raise AmbiguousDepth(
            f"subject directories found at mixed depths {sorted(depths)} under {images.name}"
        )
    else:
        sub_levels = next(iter(depths))
    return LayoutDescriptor(clinical_dir=clinical.name, images_dir=images.name, sub_levels=sub_levels)


def subject_directories(
    tree: DirectoryTree, layout: LayoutDescriptor
) -> list[tuple[str, str, list[str]]]:
    """List (subject_dir_name, intermediate_path, file_names) at the subject depth.

    intermediate_path is the slash-joined path between IMAGES and the subject
    directory ("" at depth 1, e.g. "phase1/CENTRE0003" at depth 3).
    """
    images = tree.root.child(layout.images_dir)
    if images is None:
        raise MissingImagesDir(layout.images_dir)
    out: list[tuple[str, str, list[str]]] = []

    def walk(node: TreeNode, parts: list[str]) -> None:
        for sub in node.children:
            if sub.kind != "dir":
                continue
            if len(parts) + 1 == layout.sub_levels:
                files = [c.name for c in sub.children if c.kind == "file"]
                out.append((sub.name, "/".join(parts), files))
            else:
                walk(sub, parts + [sub.name])

    walk(images, [])
    return out
