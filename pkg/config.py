import copy
import json
import logging
import os
from typing import Dict, Any, Optional


logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a configuration file or override is invalid."""
    pass


class Config:
    """Configuration manager for reconstruction runs."""

    _instance = None
    _config = None

    def __new__(cls, *args, **kwargs):
        """Singleton pattern to ensure only one config instance."""
        if cls._instance is None:
            cls._instance = super(Config, cls).__new__(cls)
        return cls._instance

    def __init__(self, config_file: str = "settings.json"):
        """
        Initialize configuration manager.

        Args:
            config_file (str): Path to the settings file
        """
        if self._config is None:
            self.config_file = config_file
            self.load_config()

    def load_config(self) -> None:
        """Load settings from file, falling back to the built-in defaults."""
        defaults = self._get_default_config()
        try:
            if os.path.exists(self.config_file):
                with open(self.config_file, 'r') as f:
                    # Settings missing from the file keep their defaults
                    self._config = deep_merge(defaults, json.load(f))
            else:
                self._config = defaults
                self.save_config()
        except Exception as e:
            logger.warning("Failed to load settings file %s: %s", self.config_file, e)
            self._config = defaults

    def save_config(self) -> None:
        """Save current settings to file."""
        try:
            with open(self.config_file, 'w') as f:
                json.dump(self._config, f, indent=2)
        except Exception as e:
            logger.warning("Failed to save settings file %s: %s", self.config_file, e)

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration."""
        return {
            "logging": {
                "enabled": True,
                "level": "INFO",
                "file": None,
                "format": "%(asctime)s %(levelname)s %(name)s: %(message)s"
            },
            "compute": {
                "device": "cpu",
                "num_threads": None
            },
            "output": {
                "archive_extension": ".dra",
                "pretty_print": True
            },
            "phantom": {
                "grid_shape": [64, 64],
                "num_frames": 150,
                "cardiac_period": 9.7,
                "resp_period": 41.3,
                "cardiac_amplitude": 0.04,
                "resp_amplitude": 0.06,
                "noise_sigma": 0.01,
                "seed": 0
            },
            "acquisition": {
                "lines_per_frame": 6,
                "num_coils": 1,
                "noise_sigma": None,
                "seed": 0
            },
            "generator": {
                "latent_dim": 2,
                "output_shape": [64, 64],
                "base_channels": 128,
                "activation": "tanh",
                "seed": 0
            },
            "training": {
                "lambda1": 0.001,
                "lambda2": 2.0,
                "epochs_per_stage": [300, 150, 300],
                "stage_frame_counts": None,
                "batch_size": 10,
                "lr_theta": 1e-4,
                "lr_z": 1e-3,
                "adam_betas": [0.9, 0.999],
                "seed": 0,
                "mode": "joint",
                "fixed_latent_kind": "random",
                "eval_every": 5,
                "snapshot_every": 25
            },
            "evaluation": {
                "threshold_ser_db": None,
                "use_magnitude": True,
                "profile_row": None
            }
        }

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value using dot notation.

        Args:
            key (str): Configuration key (e.g., 'training.batch_size')
            default (Any): Default value if key not found

        Returns:
            Any: Configuration value
        """
        keys = key.split('.')
        value = self._config

        try:
            for k in keys:
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any) -> None:
        """
        Set configuration value using dot notation.

        Args:
            key (str): Configuration key (e.g., 'training.batch_size')
            value (Any): Value to set
        """
        keys = key.split('.')
        config = self._config

        # Navigate to the parent of the target key
        for k in keys[:-1]:
            if k not in config:
                config[k] = {}
            config = config[k]

        config[keys[-1]] = value

    def section(self, name: str) -> Dict[str, Any]:
        """Return a deep copy of one top-level section."""
        value = self.get(name)
        if not isinstance(value, dict):
            raise ConfigError(f"Unknown configuration section '{name}'")
        return copy.deepcopy(value)

    def resolve(self, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Materialize every default with the given overrides applied.

        Args:
            overrides (Optional[Dict[str, Any]]): Sections to merge over the defaults

        Returns:
            Dict[str, Any]: Fully resolved configuration

        Raises:
            ConfigError: If an override names an unknown section or key
        """
        resolved = copy.deepcopy(self._config)
        if overrides:
            _check_known_keys(resolved, overrides, prefix="")
            resolved = deep_merge(resolved, overrides)
        return resolved

    @property
    def device(self) -> str:
        """Get the torch device name."""
        return self.get('compute.device', 'cpu')

    @property
    def archive_extension(self) -> str:
        """Get the default archive file extension."""
        return self.get('output.archive_extension', '.dra')

    @property
    def pretty_print(self) -> bool:
        """Check if JSON outputs should be pretty printed."""
        return self.get('output.pretty_print', True)

    def get_archive_path(self, directory: str, name: str) -> str:
        """
        Get full archive file path inside a directory.

        Args:
            directory (str): Output directory (created when missing)
            name (str): Archive name with or without extension

        Returns:
            str: Full path to archive file
        """
        if not name.endswith(self.archive_extension):
            name += self.archive_extension
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, name)


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge overrides into a copy of base."""
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _check_known_keys(reference: Dict[str, Any], overrides: Dict[str, Any], prefix: str) -> None:
    for key, value in overrides.items():
        if key not in reference:
            raise ConfigError(f"Unknown configuration key '{prefix}{key}'")
        if isinstance(value, dict) and isinstance(reference[key], dict):
            _check_known_keys(reference[key], value, prefix=f"{prefix}{key}.")


def load_run_config(path: Optional[str]) -> Dict[str, Any]:
    """
    Read a run configuration file.

    Args:
        path (Optional[str]): JSON file with section overrides, or None

    Returns:
        Dict[str, Any]: The overrides (empty when no path is given)

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file is not a JSON object
    """
    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return data


def configure_logging(settings: Optional[Dict[str, Any]] = None) -> None:
    """Apply the logging section to the root logger."""
    settings = settings or config.section("logging")
    level = settings.get("level", "INFO") if settings.get("enabled", True) else "WARNING"
    handlers = [logging.StreamHandler()]
    if settings.get("file"):
        os.makedirs(os.path.dirname(settings["file"]) or ".", exist_ok=True)
        handlers.append(logging.FileHandler(settings["file"]))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format=settings.get("format", "%(levelname)s %(name)s: %(message)s"),
        handlers=handlers,
        force=True,
    )


# Global config instance
config = Config()
