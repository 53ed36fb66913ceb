import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List

from .recording_io import atomic_path


logger = logging.getLogger(__name__)

TOOL_VERSION = '0.1.0'


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), ensure_ascii=True)


def config_digest(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of ``payload``."""
    return hashlib.sha256(canonical_json(payload).encode('utf-8')).hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: List[str]
    output_dir: str
    parameters: Dict[str, Any]
    outputs: List[str] = field(default_factory=list)
    tool_version: str = TOOL_VERSION

    @property
    def digest(self) -> str:
        return config_digest({'command': self.command, 'parameters': self.parameters})

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload['outputs'] = sorted(self.outputs)
        payload['config_digest'] = self.digest
        return payload

    def write(self, path: Path) -> None:
        logger.info(f"Writing run manifest {path} (digest {self.digest[:12]})")
        with atomic_path(path) as tmp:
            tmp.write_text(
                json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n',
                encoding='utf-8'
            )
