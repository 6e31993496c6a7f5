import logging
import os
from datetime import datetime

from src.utils.settings import log_dir


def setup_logging(prefix: str = "ironkit", quiet: bool = False):
    """Configure logging for the application"""

    directory = log_dir()
    os.makedirs(directory, exist_ok=True)

    logger = logging.getLogger()
    logger.setLevel(logging.DEBUG)

    # Repeated calls (tests, batch runs) replace our handlers instead of stacking them
    for handler in list(logger.handlers):
        if getattr(handler, "_ironkit", False):
            logger.removeHandler(handler)
            handler.close()

    # Console handler on stderr; stdout carries result documents
    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.WARNING if quiet else logging.INFO)

    # File handler
    log_filename = directory / f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
    file_handler = logging.FileHandler(log_filename)
    file_handler.setLevel(logging.DEBUG)

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    for handler in (console_handler, file_handler):
        handler.setFormatter(formatter)
        handler._ironkit = True
        logger.addHandler(handler)

    return logger
