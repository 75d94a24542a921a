"""General utility functions."""

import argparse
import copy
import hashlib
import json

import yaml


class store_dict(argparse.Action):
    """An argparse action for parsing a command line argument as a dictionary.

    Values are parsed as YAML scalars.

    Examples
    --------
    seed=7 becomes {'seed': 7}
    probe.interval_ms=50.5 becomes {'probe.interval_ms': 50.5}
    policy.kind=quality_switch becomes {'policy.kind': 'quality_switch'}
    """

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, dict())
        for value in values:
            try:
                key, val = value.split("=", 1)
            except ValueError:
                parser.error(f"Expected key=value, got {value}")
            getattr(namespace, self.dest)[key] = yaml.safe_load(val) if val else None


def set_nested(config, dotted_key, value):
    """Set a value in nested dicts addressed by a dotted key (in place)."""

    keys = dotted_key.split(".")
    target = config
    for key in keys[:-1]:
        if target.get(key) is None:
            target[key] = {}
        target = target[key]
        if not isinstance(target, dict):
            raise ValueError(f"Cannot set {dotted_key}: {key} is not a mapping")
    target[keys[-1]] = value


def apply_overrides(config, overrides):
    """Copy of config with dotted-key overrides applied."""

    config = copy.deepcopy(config)
    for key, value in (overrides or {}).items():
        set_nested(config, key, value)

    return config


def config_hash(config):
    """sha256 of the canonical JSON form of a config."""

    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)

    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def mbps_to_bps(rate_mbps):
    return rate_mbps * 1e6


def kbps_to_mbps(rate_kbps):
    return rate_kbps / 1000.0
