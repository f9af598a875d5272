"""Flat key/value run configuration with env overrides and a content digest.

The config file is plain text, one ``key = value`` per line, ``#`` comments,
with sectioned keys like ``train.lr``. Environment variables prefixed
``HLOBLAB_`` override file values; a double underscore maps to the section
dot (``HLOBLAB_TRAIN__LR`` overrides ``train.lr``).
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "HLOBLAB_"

DEFAULTS = {
    "ticker": "SYN",
    "tick_size": "0.01",
    "lot_size": "1",
    "year": "1970",
    "data_dir": "data",
    "out_dir": "out",
    "days": "",
    "split.train": "",
    "split.validation": "",
    "split.test": "",
    "horizon": "10",
    "n_bins": "32",
    "bootstrap": "10",
    "seed": "0",
    "window_len": "100",
    "trim_start_s": "1800",
    "trim_end_s": "1800",
    "synth.n_events": "600",
    "synth.regime": "compact",
    "train.batch_size": "32",
    "train.max_epochs": "100",
    "train.early_stop_delta": "0.003",
    "train.patience": "15",
    "train.lr": "6e-5",
    "train.beta1": "0.90",
    "train.beta2": "0.95",
    "train.eps": "1e-8",
    "train.weight_decay": "0.01",
    "train.balanced_cap": "5000",
}


class RunConfig:
    """Typed view over the flat key/value store."""

    def __init__(self, values: dict[str, str]):
        unknown = set(values) - set(DEFAULTS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown key")
        self.values = dict(DEFAULTS)
        self.values.update(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        values = parse_config_text(Path(path).read_text())
        for env_key, env_val in sorted(os.environ.items()):
            if env_key.startswith(ENV_PREFIX):
                key = env_key[len(ENV_PREFIX):].lower().replace("__", ".")
                values[key] = env_val
        return cls(values)

    # filesystem locations are excluded from the digest: it guards against
    # semantic config drift between stages, and the same run relocated to a
    # different directory should produce byte-identical artifacts
    DIGEST_EXCLUDED = frozenset({"data_dir", "out_dir"})

    def digest(self) -> str:
        canonical = "\n".join(f"{k}={self.values[k]}"
                              for k in sorted(self.values)
                              if k not in self.DIGEST_EXCLUDED)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def _get(self, key, conv):
        try:
            return conv(self.values[key])
        except (ValueError, KeyError) as exc:
            raise ConfigError(key, str(exc)) from exc

    def get_str(self, key) -> str:
        return self._get(key, str)

    def get_int(self, key) -> int:
        return self._get(key, int)

    def get_float(self, key) -> float:
        return self._get(key, float)

    def get_days(self, key) -> list[str]:
        raw = self.values.get(key, "")
        return [d.strip() for d in raw.split(",") if d.strip()]


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}", f"expected 'key = value': {stripped!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values
