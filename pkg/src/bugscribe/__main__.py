from __future__ import annotations

import sys

from bugscribe.cli import main

sys.exit(main())
