import logging
import sys

from app.core.config import LOG_LEVEL

logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
logger = logging.getLogger(__name__)

from app.cli.commands import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run())
