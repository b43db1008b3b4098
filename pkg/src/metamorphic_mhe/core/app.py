import logging
import os
from collections.abc import AsyncIterator
from contextlib import asynccontextmanager
from dataclasses import dataclass

from mcp.server.fastmcp import FastMCP

from metamorphic_mhe.bench.scenarios import ExperimentSystem, build_system
from metamorphic_mhe.config.config import Config, ExperimentConfig

logger = logging.getLogger(__name__)


@dataclass
class AppContext:
    config: Config
    experiment: ExperimentConfig
    system: ExperimentSystem


@asynccontextmanager
async def app_lifespan(server: FastMCP) -> AsyncIterator[AppContext]:
    config = Config.from_file(os.getenv("MMHE_SETTINGS", "config.yaml"))
    system = build_system(config.experiment)
    logger.info(
        f"Serving model '{config.experiment.model}' "
        f"(n={system.plant.n}, p={system.plant.p}, horizon={config.experiment.horizon})"
    )
    yield AppContext(config=config, experiment=config.experiment, system=system)


def run(config: Config):
    mcp.settings.host = config.mcp.address
    mcp.settings.port = int(config.mcp.port)
    mcp.settings.debug = bool(config.mcp.debug)
    mcp.run(transport=os.getenv("MMHE_MCP_TRANSPORT", config.mcp.transports[0]))


mcp = FastMCP("Metamorphic MHE", lifespan=app_lifespan)

# Import tools to register them with MCP
from metamorphic_mhe.tools import tools  # noqa: E402,F401
