"""pbmharvest CLI package.

Structure:
- main.py: cyclopts app, one command per pipeline stage
- config.py: config file loading (~/.pbmharvestrc) and environment overrides
- errors.py: library errors -> exit codes
"""

from .main import main

__all__ = ["main"]
