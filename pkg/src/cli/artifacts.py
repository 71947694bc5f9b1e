"""
Stage cache for pipeline runs.

A JSON manifest in the output directory records, per stage, the content
hash of its inputs and the files it produced. A stage is skipped when the
hash matches and every recorded output still exists.
"""

import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from src.reporting.summary import to_builtin
from src.utils.logger import get_logger

logger = get_logger(__name__)

MANIFEST_NAME = "stages.json"


def content_hash(config: dict, files: Iterable = ()) -> str:
    """sha256 over a canonical JSON dump of `config` and the bytes of `files`"""
    digest = hashlib.sha256()
    digest.update(json.dumps(config, sort_keys=True, default=str).encode("utf-8"))
    for path in files:
        path = Path(path)
        digest.update(str(path.name).encode("utf-8"))
        digest.update(path.read_bytes() if path.exists() else b"<missing>")
    return digest.hexdigest()


class ArtifactStore:
    """Manages the stage manifest of one output directory"""

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.manifest_path = self.output_dir / MANIFEST_NAME
        self.entries: Optional[Dict[str, dict]] = None

    def connect(self) -> bool:
        """Load (or start) the manifest"""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        if self.manifest_path.exists():
            try:
                self.entries = json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError:
                logger.warning(f"⚠ Stage manifest {self.manifest_path} is unreadable; starting fresh")
                self.entries = {}
        else:
            self.entries = {}
        logger.debug(f"✓ Stage manifest opened with {len(self.entries)} entries")
        return True

    def disconnect(self) -> None:
        """Write the manifest back"""
        if self.entries is None:
            return
        self.manifest_path.write_text(json.dumps(self.entries, indent=2, sort_keys=True))
        self.entries = None

    def is_fresh(self, stage: str, input_hash: str) -> bool:
        entry = (self.entries or {}).get(stage)
        if not entry or entry.get("hash") != input_hash:
            return False
        return all((self.output_dir / rel).exists() for rel in entry.get("outputs", []))

    def outputs(self, stage: str) -> List[Path]:
        entry = (self.entries or {}).get(stage, {})
        return [self.output_dir / rel for rel in entry.get("outputs", [])]

    def metrics(self, stage: str) -> dict:
        return (self.entries or {}).get(stage, {}).get("metrics", {})

    def record(self, stage: str, input_hash: str, outputs: Iterable, metrics: dict = None) -> None:
        rel = sorted(str(Path(p).resolve().relative_to(self.output_dir.resolve())) for p in outputs)
        self.entries[stage] = {"hash": input_hash, "outputs": rel, "metrics": to_builtin(metrics or {})}

    def output_hash(self, stage: str) -> str:
        """Hash of a stage's output files, used as an input hash by later stages"""
        return content_hash({"stage": stage}, self.outputs(stage))

    def __enter__(self):
        self.connect()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.disconnect()
