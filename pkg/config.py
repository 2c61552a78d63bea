import copy
import json
import os
import logging
from datetime import date
from pathlib import Path
from typing import Dict, Any, Optional, List, Tuple
import hashlib
import time

SURFACE_NAMES = ("hard", "clay", "grass")
TIER_NAMES = ("grand_slam", "finals", "t1000", "t500")

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 20140101,
    "data": {
        "raw_dir": "data/raw",
        "ledger_dir": "data/ledger",
        "output_dir": "output",
        "player_map": "",
        "attributes": {
            "men": "data/players_men.csv",
            "women": "data/players_women.csv"
        }
    },
    "graph": {
        "lambda_decay": 0.38,
        # rows: target surface, columns: surface the match was played on
        "surface_transfer": {
            "hard": {"hard": 1.0, "clay": 0.01, "grass": 0.37},
            "clay": {"hard": 0.07, "clay": 1.0, "grass": 0.09},
            "grass": {"hard": 0.45, "clay": 0.05, "grass": 1.0}
        },
        "tier_prestige": {
            "grand_slam": 1.0,
            "finals": 0.94,
            "t1000": 0.85,
            "t500": 0.69
        }
    },
    "model": {
        "q": 0.25,
        "K": 2,
        "layers": 2,
        "hidden": 64,
        "use_activation": False,
        "label_smoothing": 0.19,
        "learning_rate": 0.003,
        "weight_decay": 1e-4,
        "dropout": 0.3,
        "initial_epochs": 150,
        "retrain_epochs": 30,
        "retrain_interval_snapshots": 38
    },
    "walkforward": {
        "tours": ["men", "women"],
        "history_start": "2014-01-01",
        "validation_start": "2019-08-29",
        "validation_end": "2022-11-20",
        "test_start": "2023-01-01",
        "test_end": "2025-06-08",
        "train_fraction": 0.15,
        "prediction_graph": "full",
        "save_checkpoints": True
    },
    "baselines": {
        "elo_initial": 1500.0,
        "elo_k_numerator": 250.0,
        "elo_k_offset": 5.0,
        "elo_k_exponent": 0.4,
        "welo_delta": 2.0,
        "bt_window_days": 730,
        "bt_regularisation": 0.01,
        "bt_tolerance": 1e-6,
        "bt_max_iterations": 10000
    },
    "intransitivity": {
        "logit_epsilon": 1e-3,
        "unobserved_policy": "zero"
    },
    "evaluation": {
        "bootstrap_resamples": 10000,
        "robustness_bins": 3,
        "calibration_depth": 5
    },
    "betting": {
        "gamma": None,
        "staking": "kelly",
        "probability_column": "p_model",
        "trials": 10000,
        "grid_step": 0.05,
        "random_stake": "strategy"
    }
}

ENV_OVERRIDES = ("COURTGRAPH_DATA_DIR", "COURTGRAPH_OUTPUT_DIR", "COURTGRAPH_SEED")


class ConfigManager:
    """Layered configuration: defaults, then the JSON file, then environment overrides"""

    def __init__(self, config_file: str = "courtgraph_config.json"):
        self.config_file = Path(config_file)
        self._cache: Optional[Dict[str, Any]] = None
        self._cache_hash: Optional[str] = None
        self._last_modified: float = 0
        self._validation_errors: List[str] = []
        self.default_config: Dict[str, Any] = copy.deepcopy(DEFAULT_CONFIG)
        self.config = self._load_config_progressive()

    def _load_config_progressive(self) -> Dict[str, Any]:
        """Load configuration from every source with caching"""
        if self._is_cache_valid():
            return copy.deepcopy(self._cache)

        self._validation_errors = []
        config = copy.deepcopy(self.default_config)

        file_config = self._load_from_file()
        config = self._merge_configs(config, file_config)

        env_config = self._load_from_env()
        config = self._merge_configs(config, env_config)

        config = self._validate_config_with_fallbacks(config)
        self._update_cache(config)
        return config

    def _is_cache_valid(self) -> bool:
        if self._cache is None:
            return False

        if self.config_file.exists():
            if self.config_file.stat().st_mtime > self._last_modified:
                return False

        return self._get_env_hash() == self._cache_hash

    def _load_from_env(self) -> Dict[str, Any]:
        env_config: Dict[str, Any] = {}

        if "COURTGRAPH_DATA_DIR" in os.environ:
            data_dir = Path(os.environ["COURTGRAPH_DATA_DIR"])
            env_config.setdefault("data", {})["raw_dir"] = str(data_dir / "raw")
            env_config["data"]["ledger_dir"] = str(data_dir / "ledger")
        if "COURTGRAPH_OUTPUT_DIR" in os.environ:
            env_config.setdefault("data", {})["output_dir"] = os.environ["COURTGRAPH_OUTPUT_DIR"]
        if "COURTGRAPH_SEED" in os.environ:
            try:
                env_config["seed"] = int(os.environ["COURTGRAPH_SEED"])
            except ValueError:
                self._validation_errors.append(
                    f"Ignoring non-integer COURTGRAPH_SEED={os.environ['COURTGRAPH_SEED']!r}")

        return env_config

    def _load_from_file(self) -> Dict[str, Any]:
        """Load configuration from file with error recovery"""
        if not self.config_file.exists():
            logging.warning(f"Config file {self.config_file} does not exist, using defaults")
            return {}

        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                config = json.load(f)

            if not isinstance(config, dict):
                raise ValueError("Configuration root must be a dictionary")

            return config

        except json.JSONDecodeError as e:
            error_msg = f"Invalid JSON in config file {self.config_file}: {e}"
            logging.error(error_msg)
            self._validation_errors.append(error_msg)
            return {}

        except (IOError, ValueError) as e:
            error_msg = f"Could not read config file {self.config_file}: {e}"
            logging.error(error_msg)
            self._validation_errors.append(error_msg)
            return {}

    def _get_env_hash(self) -> str:
        env_vars = [os.environ.get(name, "") for name in ENV_OVERRIDES]
        return hashlib.md5("|".join(env_vars).encode()).hexdigest()

    def _update_cache(self, config: Dict[str, Any]) -> None:
        self._cache = copy.deepcopy(config)
        self._cache_hash = self._get_env_hash()
        if self.config_file.exists():
            self._last_modified = self.config_file.stat().st_mtime
        else:
            self._last_modified = 0

    def save_config(self, config: Optional[Dict[str, Any]] = None, path: Optional[str] = None) -> Path:
        """Write configuration atomically (temp file, then rename)"""
        if config is None:
            config = self.config
        target = Path(path) if path is not None else self.config_file

        max_retries = 3
        last_error = None

        for attempt in range(max_retries):
            try:
                target.parent.mkdir(parents=True, exist_ok=True)
                temp_file = target.with_suffix('.tmp')
                with open(temp_file, 'w', encoding='utf-8') as f:
                    json.dump(config, f, indent=2, sort_keys=True)
                temp_file.replace(target)

                if target == self.config_file:
                    self._update_cache(config)
                return target

            except IOError as e:
                last_error = e
                if attempt < max_retries - 1:
                    logging.warning(f"Config save attempt {attempt + 1} failed: {e}")
                    time.sleep(0.1 * (2 ** attempt))
                else:
                    logging.error(f"Failed to save config after {max_retries} attempts: {e}")

        raise IOError(f"Could not save config file {target}: {last_error}")

    def _merge_configs(self, base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
        """Recursively merge override config into base config"""
        result = base.copy()
        for key, value in override.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value
        return result

    def section(self, name: str) -> Dict[str, Any]:
        """Copy of one configuration section"""
        return copy.deepcopy(self.config.get(name, {}))

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the effective configuration"""
        canonical = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def set_value(self, section: str, key: str, value: Any) -> None:
        """Override one value in memory (used for CLI flags)"""
        self.config.setdefault(section, {})[key] = value

    def _fallback(self, config: Dict[str, Any], section: str, key: str, reason: str) -> None:
        config[section][key] = copy.deepcopy(self.default_config[section][key])
        self._validation_errors.append(f"{section}.{key}: {reason}, using default {config[section][key]!r}")

    def _check_number(self, config: Dict[str, Any], section: str, key: str,
                      low: Optional[float] = None, high: Optional[float] = None,
                      low_open: bool = False, integer: bool = False) -> None:
        value = config[section].get(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self._fallback(config, section, key, f"expected a number, got {value!r}")
            return
        if integer and int(value) != value:
            self._fallback(config, section, key, f"expected an integer, got {value!r}")
            return
        if low is not None and (value < low or (low_open and value == low)):
            self._fallback(config, section, key, f"value {value!r} below allowed range")
            return
        if high is not None and value > high:
            self._fallback(config, section, key, f"value {value!r} above allowed range")

    def _validate_config_with_fallbacks(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Validate configuration and apply automatic fallbacks for invalid settings"""
        for section, fallback in self.default_config.items():
            if not isinstance(fallback, dict):
                continue
            if section not in config:
                config[section] = copy.deepcopy(fallback)
                self._validation_errors.append(f"Missing required section '{section}', using defaults")
            elif not isinstance(config[section], dict):
                config[section] = copy.deepcopy(fallback)
                self._validation_errors.append(f"Invalid section '{section}' type, using defaults")

        if isinstance(config.get("seed"), bool) or not isinstance(config.get("seed"), int):
            config["seed"] = self.default_config["seed"]
            self._validation_errors.append(f"Invalid seed, using default {config['seed']}")

        # graph
        self._check_number(config, "graph", "lambda_decay", low=0.0, low_open=True)
        transfer = config["graph"].get("surface_transfer")
        if not self._valid_transfer(transfer):
            self._fallback(config, "graph", "surface_transfer",
                           "needs a 3x3 map over hard/clay/grass with values in [0, 1] and unit diagonal")
        prestige = config["graph"].get("tier_prestige")
        if not (isinstance(prestige, dict) and all(
                isinstance(prestige.get(t), (int, float)) and prestige.get(t) > 0 for t in TIER_NAMES)):
            self._fallback(config, "graph", "tier_prestige", "every tier needs a positive weight")

        # model
        self._check_number(config, "model", "q", low=0.0, high=0.25)
        for key in ("K", "layers", "hidden", "initial_epochs", "retrain_interval_snapshots"):
            self._check_number(config, "model", key, low=1, integer=True)
        self._check_number(config, "model", "retrain_epochs", low=0, integer=True)
        self._check_number(config, "model", "label_smoothing", low=0.0, high=0.2)
        self._check_number(config, "model", "learning_rate", low=0.0, low_open=True)
        self._check_number(config, "model", "weight_decay", low=0.0)
        self._check_number(config, "model", "dropout", low=0.0, high=0.95)
        if not isinstance(config["model"].get("use_activation"), bool):
            self._fallback(config, "model", "use_activation", "expected true/false")

        # walkforward
        wf = config["walkforward"]
        self._check_number(config, "walkforward", "train_fraction", low=0.0, high=0.999, low_open=True)
        if wf.get("prediction_graph") not in ("full", "train"):
            self._fallback(config, "walkforward", "prediction_graph", "must be 'full' or 'train'")
        tours = wf.get("tours")
        if not (isinstance(tours, list) and tours and all(t in ("men", "women") for t in tours)):
            self._fallback(config, "walkforward", "tours", "must list 'men' and/or 'women'")
        if not self._valid_dates(wf):
            for key in ("history_start", "validation_start", "validation_end", "test_start", "test_end"):
                wf[key] = self.default_config["walkforward"][key]
            self._validation_errors.append("walkforward date ranges must be ISO dates, ordered and "
                                           "non-overlapping, using defaults")

        # baselines
        for key in ("elo_k_numerator", "elo_k_offset", "bt_tolerance"):
            self._check_number(config, "baselines", key, low=0.0, low_open=True)
        self._check_number(config, "baselines", "elo_initial")
        self._check_number(config, "baselines", "elo_k_exponent", low=0.0)
        self._check_number(config, "baselines", "welo_delta", low=0.0, high=2.0)
        self._check_number(config, "baselines", "bt_window_days", low=1, integer=True)
        self._check_number(config, "baselines", "bt_regularisation", low=0.0, low_open=True)
        self._check_number(config, "baselines", "bt_max_iterations", low=1, integer=True)

        # intransitivity
        self._check_number(config, "intransitivity", "logit_epsilon", low=0.0, high=0.5, low_open=True)
        if config["intransitivity"].get("unobserved_policy") not in ("zero", "observed_only"):
            self._fallback(config, "intransitivity", "unobserved_policy", "must be 'zero' or 'observed_only'")

        # evaluation
        self._check_number(config, "evaluation", "bootstrap_resamples", low=1, integer=True)
        self._check_number(config, "evaluation", "robustness_bins", low=2, high=5, integer=True)
        self._check_number(config, "evaluation", "calibration_depth", low=1, high=10, integer=True)

        # betting
        betting = config["betting"]
        if betting.get("staking") not in ("kelly", "unit", "kelly_favourite"):
            self._fallback(config, "betting", "staking", "must be 'kelly', 'unit' or 'kelly_favourite'")
        gamma = betting.get("gamma")
        if gamma is not None and (isinstance(gamma, bool) or not isinstance(gamma, (int, float)) or gamma < 0):
            self._fallback(config, "betting", "gamma", "must be null or a non-negative number")
        self._check_number(config, "betting", "trials", low=1, integer=True)
        self._check_number(config, "betting", "grid_step", low=0.0, low_open=True)
        if betting.get("random_stake") not in ("strategy", "unit", "kelly"):
            self._fallback(config, "betting", "random_stake", "must be 'strategy', 'unit' or 'kelly'")

        return config

    @staticmethod
    def _valid_transfer(transfer: Any) -> bool:
        if not isinstance(transfer, dict):
            return False
        for target in SURFACE_NAMES:
            row = transfer.get(target)
            if not isinstance(row, dict):
                return False
            for source in SURFACE_NAMES:
                value = row.get(source)
                if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
                    return False
            if row[target] != 1.0:
                return False
        return True

    @staticmethod
    def _valid_dates(wf: Dict[str, Any]) -> bool:
        try:
            history = date.fromisoformat(wf["history_start"])
            v_start = date.fromisoformat(wf["validation_start"])
            v_end = date.fromisoformat(wf["validation_end"])
            t_start = date.fromisoformat(wf["test_start"])
            t_end = date.fromisoformat(wf["test_end"])
        except (KeyError, TypeError, ValueError):
            return False
        return history < v_start <= v_end < t_start <= t_end

    def validate_config(self) -> Tuple[bool, List[str]]:
        """Reload and validate; returns (is_valid, errors)"""
        self._cache = None
        self._validation_errors = []
        self.config = self._load_config_progressive()
        is_valid = len(self._validation_errors) == 0
        return is_valid, self._validation_errors.copy()

    def reload_config(self) -> None:
        self._cache = None
        self.config = self._load_config_progressive()

    def get_validation_errors(self) -> List[str]:
        return self._validation_errors.copy()
