"""
Initialize the run registry - create all tables
"""
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from database import init_db
from config import settings
import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def main():
    """Create the runs table if it does not exist"""
    logger.info(f"Initializing run registry at: {settings.database_url}")

    try:
        init_db()
        logger.info("Run registry ready")

    except Exception as e:
        logger.error(f"Failed to initialize run registry: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
