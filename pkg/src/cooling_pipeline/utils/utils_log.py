"""
Logger factory shared by every fbcool module.

Set FBCOOL_DEBUG=true to get DEBUG output; default level is INFO.
"""

import logging
import os
import sys

DEBUG_MODE = os.environ.get("FBCOOL_DEBUG", "").lower() in ("1", "true", "yes")


class LogLineCountFilter(logging.Filter):
    def __init__(self):
        super().__init__()
        self.count = 1

    def filter(self, record):
        record.count = self.count
        self.count = (self.count + 1) % 1000
        return True


class SimpleLoggerFactory:
    ROOT_LOGGER_NAME = "cooling_pipeline"

    def __init__(self, level=logging.INFO):
        self.level = level
        self.log = self.configureRootLogger()

    def configureRootLogger(self):
        logger = logging.getLogger(self.ROOT_LOGGER_NAME)
        logger.setLevel(self.level)

        formatter = logging.Formatter(
            "%(count)3d: [%(levelname)s %(filename)s:%(lineno)d] %(message)s"
        )
        formatter.datefmt = "%H:%M:%S"

        for handler in logger.handlers[:]:
            logger.removeHandler(handler)

        ch = logging.StreamHandler(sys.stderr)
        ch.setLevel(self.level)
        ch.setFormatter(formatter)
        # on the handler so records propagated from child loggers are counted too
        ch.addFilter(LogLineCountFilter())
        logger.addHandler(ch)
        logger.propagate = False

        return logger

    def setLevel(self, level):
        self.level = level
        self.log.setLevel(level)
        for handler in self.log.handlers:
            handler.setLevel(level)

    def getLogger(self, name):
        return logging.getLogger(self.ROOT_LOGGER_NAME + "." + name)


currentLoggerFactory = SimpleLoggerFactory(
    level=logging.DEBUG if DEBUG_MODE else logging.INFO
)


def getLogger(name):
    return currentLoggerFactory.getLogger(name)


def set_verbose(verbose=True):
    """Force DEBUG (used by the CLI --verbose flag)."""
    currentLoggerFactory.setLevel(logging.DEBUG if verbose else logging.INFO)
