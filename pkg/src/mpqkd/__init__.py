"""Mode-pairing QKD simulator and finite-key post-processing."""

__version__ = "0.1.0"

from .model import (ConfigError, Epsilons, IntensityClass, PartyParams, SystemConfig,  # noqa: E402
                    TallyTable, load_config, validate_config)

__all__ = ["ConfigError", "Epsilons", "IntensityClass", "PartyParams", "SystemConfig",
           "TallyTable", "load_config", "validate_config", "__version__"]
