import os
import sys

from dotenv import load_dotenv
from loguru import logger

from src_common.common_utils import configure_logger
from src_sim.cli import main

load_dotenv()
configure_logger(os.getenv("SKG_SIM_LOG_FILE"), os.getenv("SKG_SIM_LOG_LEVEL", "INFO"))

logger.info("Starting skg-sim...")
sys.exit(main())
