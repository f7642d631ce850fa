import logging
import sys
from pathlib import Path

from .utils import ensure_dir


class Colors:
    RED = '\033[0;31m'
    GREEN = '\033[0;32m'
    YELLOW = '\033[1;33m'
    BLUE = '\033[0;34m'
    NC = '\033[0m'


class Logger:
    """Colored console diagnostics on stderr plus an optional log file."""

    def __init__(self, log_file=None, verbose: bool = False, quiet: bool = False, stream=None):
        if quiet:
            log_level = logging.WARNING
        elif verbose:
            log_level = logging.DEBUG
        else:
            log_level = logging.INFO

        self.logger = logging.getLogger('npcselect')
        self.logger.setLevel(log_level)
        self.logger.propagate = False
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()
        if log_file is not None:
            log_file = Path(log_file)
            ensure_dir(log_file.parent)
            handler = logging.FileHandler(str(log_file), encoding='utf-8')
            handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
            self.logger.addHandler(handler)

        self.verbose = verbose
        self.quiet = quiet
        self.stream = stream

    def log(self, level: str, message: str):
        level = level.upper()

        if level == 'DEBUG' and not self.verbose:
            return
        if level in ('INFO', 'SUCCESS') and self.quiet:
            return

        color_map = {
            'INFO': Colors.BLUE,
            'WARN': Colors.YELLOW,
            'ERROR': Colors.RED,
            'SUCCESS': Colors.GREEN,
            'DEBUG': Colors.NC
        }
        color = color_map.get(level, Colors.NC)
        stream = self.stream or sys.stderr
        print(f"[{color}{level}{Colors.NC}] {message}", file=stream)

        method = {'WARN': 'warning', 'SUCCESS': 'info'}.get(level, level.lower())
        getattr(self.logger, method, self.logger.info)(message)

    def close(self):
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()


class NullLogger:
    """Drop-in for library calls made without a logger."""

    def log(self, level: str, message: str):
        pass


def resolve(logger):
    return logger if logger is not None else NullLogger()
