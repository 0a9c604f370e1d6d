import logging
import threading
from typing import Optional

from fastapi import HTTPException, status

from src.cli.config_file import load_run_config
from src.config import settings
from src.errors import LU2NetError
from src.model.checkpoint import load_weights
from src.model.network import Network, init_params
from src.schemas import NetworkConfig

logger = logging.getLogger(__name__)

_lock = threading.Lock()
_network: Optional[Network] = None


def error_detail(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}


def _build_network() -> Network:
    config = load_run_config(settings.api_config).network if settings.api_config else NetworkConfig()
    if settings.api_weights:
        return load_weights(settings.api_weights, config)
    logger.warning(f"LU2NET_API_WEIGHTS not set; serving an untrained network (seed {settings.api_seed})")
    return init_params(config, settings.api_seed)


def get_network() -> Network:
    """Shared network, loaded on first use; forward passes are safe to run concurrently."""
    global _network
    with _lock:
        if _network is None:
            try:
                _network = _build_network()
            except (LU2NetError, OSError) as e:
                logger.error(f"❌ Cannot load network: {e}")
                raise HTTPException(
                    status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
                    detail=error_detail("MODEL_UNAVAILABLE", str(e)),
                )
        return _network


def set_network(net: Optional[Network]) -> None:
    global _network
    with _lock:
        _network = net
