"""
Drought insurance rate-making engine - command-line entry point

    python main.py ingest|analyze|rates|fund|simulate --config ratemaker.env
"""
import sys

from dotenv import load_dotenv

from src.cli import main

# Load environment variables (RATEMAKER_CONFIG, LOG_LEVEL)
load_dotenv()

if __name__ == "__main__":
    sys.exit(main())
