from __future__ import annotations

import sys

from dotenv import load_dotenv

from .settings import ConfigError, apply_thread_caps, get_settings

# BLAS thread caps only take effect if set before numpy loads
load_dotenv()
try:
    apply_thread_caps(get_settings())
except ConfigError as exc:
    print(f"error: {exc}", file=sys.stderr)
    sys.exit(2)

from .cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
