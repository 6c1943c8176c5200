"""Pipeline configuration, config hashing, and seed derivation."""

import dataclasses
import hashlib
import json

TOOL_VERSION = "0.1.0"


def stage_seed(seed, tag):
    """Derive a per-stage seed from the root seed.

    The root seed is XORed with the top 8 bytes of sha256(tag), masked to
    63 bits so it stays valid for every RNG backend. Stages therefore get
    independent streams while remaining a pure function of (seed, tag).
    """
    h = int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "big")
    return (int(seed) ^ h) & (2**63 - 1)


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    patch_size: int = 8
    fg_min: float = 0.3
    K: int = 4
    K_over: int = 12
    smooth_lambda: float = 0.1
    min_run: int = 1
    d_pe: int = 8
    ngram_order: int = 3
    alpha: float = 1.0
    threshold: float = 0.0
    seed: int = 7

    _JSON_KEYS = {
        "patch_size": "patch_size",
        "fg_min": "fg_min",
        "K": "K",
        "K_over": "K_over",
        "smooth_lambda": "lambda",
        "min_run": "min_run",
        "d_pe": "D_pe",
        "ngram_order": "ngram_order",
        "alpha": "alpha",
        "threshold": "threshold",
        "seed": "seed",
    }

    def to_json(self):
        return {self._JSON_KEYS[f.name]: getattr(self, f.name)
                for f in dataclasses.fields(self)}

    @classmethod
    def from_json(cls, obj):
        reverse = {v: k for k, v in cls._JSON_KEYS.items()}
        kwargs = {reverse[k]: v for k, v in obj.items() if k in reverse}
        return cls(**kwargs)

    def config_hash(self):
        """12-hex-digit digest of the canonical JSON form (paths excluded)."""
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def stage_seed(self, tag):
        return stage_seed(self.seed, tag)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


def artifact_stamp(config):
    """The {tool_version, config_hash, seed} block embedded in artifacts."""
    return {
        "tool_version": TOOL_VERSION,
        "config_hash": config.config_hash(),
        "seed": config.seed,
    }
