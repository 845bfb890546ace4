"""voxfuse package root.

Keep this module lightweight: avoid importing torch or performing side
effects at import time. Import from the flat packages instead:

- `from reconstruction import fuse_sequence` (with `src` on the path, as pytest.ini sets it)
- or `python src/cli.py <subcommand>` for the command line
"""

__all__: list[str] = []
