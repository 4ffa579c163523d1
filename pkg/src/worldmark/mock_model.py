"""Mock world model runner: ``python -m worldmark.mock_model CASE_DIR``."""
import sys

from .harness import mock_runner_main

if __name__ == "__main__":
    sys.exit(mock_runner_main())
