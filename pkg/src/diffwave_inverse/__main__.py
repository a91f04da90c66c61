from __future__ import annotations

import sys

from diffwave_inverse.cli import main

sys.exit(main())
