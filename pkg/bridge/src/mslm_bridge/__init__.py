"""Model-serving bridge for the mslm remote-provider wire protocol."""

from .app import BridgeConfig, create_app

__all__ = ["BridgeConfig", "create_app"]
