"""
Dataset manifests: CSV with header `id,path,split`.
"""
import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from gatiaa.graph.afg import afg_read
from gatiaa.graph.feature_graph import FeatureGraph
from gatiaa.utils.errors import ManifestError

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
HEADER = ['id', 'path', 'split']


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    split: str


def split_for_id(graph_id: str, train: int = 80, val: int = 10) -> str:
    """Deterministic 80/10/10 assignment from a hash of the id."""
    bucket = int(hashlib.md5(graph_id.encode('utf-8'), usedforsecurity=False).hexdigest(), 16) % 100
    if bucket < train:
        return 'train'
    if bucket < train + val:
        return 'val'
    return 'test'


def write_manifest(entries: Iterable[ManifestEntry], path) -> None:
    path = Path(path)
    with path.open('w', newline='', encoding='utf-8') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(HEADER)
        for entry in entries:
            writer.writerow([entry.id, entry.path, entry.split])


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}", {'path': str(path)})
    with path.open('r', newline='', encoding='utf-8') as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != HEADER:
            raise ManifestError(f"manifest header must be {','.join(HEADER)}, got {header}",
                                {'path': str(path)})
        entries = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or row[2] not in SPLITS:
                raise ManifestError(f"{path}:{line_no}: malformed row {row}",
                                    {'path': str(path), 'line': line_no})
            entries.append(ManifestEntry(*row))
    return entries


def load_split(manifest_path, split: str, entries: Optional[List[ManifestEntry]] = None
               ) -> List[FeatureGraph]:
    """Read every AFG file of one split; relative paths resolve against the manifest."""
    if split not in SPLITS:
        raise ManifestError(f"unknown split {split!r}", {'split': split})
    manifest_path = Path(manifest_path)
    entries = entries if entries is not None else read_manifest(manifest_path)
    graphs = []
    for entry in entries:
        if entry.split != split:
            continue
        file_path = Path(entry.path)
        if not file_path.is_absolute():
            file_path = manifest_path.parent / file_path
        graphs.append(afg_read(file_path, entry.id))
    logger.info(f"loaded {len(graphs)} graphs for split {split!r} from {manifest_path}")
    return graphs


def split_counts(entries: Iterable[ManifestEntry]) -> Dict[str, int]:
    counts = {split: 0 for split in SPLITS}
    for entry in entries:
        counts[entry.split] += 1
    return counts
