import logging
import os
import sys
from datetime import datetime
from typing import Optional


class SGFlowLoggerSetup:
    _initialized = False

    @classmethod
    def setup(cls,
              log_dir: Optional[str] = None,
              console_level: int = logging.INFO,
              file_level: int = logging.DEBUG) -> None:
        """
        Configure the root logger for sgflow.
        Should be called once at application startup.

        Console output goes to stderr; stdout is reserved for data.

        Args:
            log_dir: Directory for a timestamped log file (no file when None)
            console_level: Logging level for console output
            file_level: Logging level for file output
        """
        if cls._initialized:
            return

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        root_logger = logging.getLogger()
        root_logger.handlers = []

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(console_level)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

        if log_dir is not None:
            if not os.path.exists(log_dir):
                os.makedirs(log_dir)
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            log_file = os.path.join(log_dir, f"sgflow_{timestamp}.log")

            file_handler = logging.FileHandler(log_file, encoding="utf-8")
            file_handler.setLevel(file_level)
            file_handler.setFormatter(formatter)
            root_logger.addHandler(file_handler)
            root_logger.setLevel(min(console_level, file_level))
        else:
            root_logger.setLevel(console_level)

        cls._initialized = True


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger with the specified name.

    Args:
        name: Name of the module/class (typically __name__)

    Returns:
        logging.Logger: Logger instance
    """
    return logging.getLogger(name)


LOG_LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL
}


def get_log_level(default_level: int = logging.WARNING) -> int:
    """Get log level from environment variable or return default"""
    level_name = os.environ.get('SGFLOW_LOG_LEVEL', '').upper()
    return LOG_LEVELS.get(level_name, default_level)
