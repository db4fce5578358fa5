"""
Logging configuration and stage timing
"""

import logging
import os
import time

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

performance_logger = logging.getLogger('performance')


def setup_logging(level=None, log_file=None):
    """Configure the root logger once: stderr always, a file when requested"""
    level_name = (level or os.getenv('HEATRING_LOG_LEVEL') or 'INFO').upper()
    log_file = log_file or os.getenv('HEATRING_LOG_FILE')

    handlers = [logging.StreamHandler()]
    if log_file:
        log_dir = os.path.dirname(os.path.abspath(log_file))
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    for handler in handlers:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    # font cache messages
    logging.getLogger('matplotlib').setLevel(logging.WARNING)


class StageTimer:
    """Context manager logging how long a pipeline stage took"""

    def __init__(self, stage, **context):
        self.stage = stage
        self.context = context
        self.started = None
        self.duration = None

    def __enter__(self):
        self.started = time.perf_counter()
        details = ' '.join(f"{key}={value}" for key, value in self.context.items())
        performance_logger.info(f"Stage started: {self.stage} {details}".rstrip())
        return self

    def __exit__(self, exc_type, exc, tb):
        self.duration = time.perf_counter() - self.started
        if exc_type is None:
            performance_logger.info(f"Stage completed: {self.stage} in {self.duration:.3f}s")
        else:
            performance_logger.warning(f"Stage failed: {self.stage} after {self.duration:.3f}s ({exc_type.__name__})")
        return False
