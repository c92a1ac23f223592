"""Error type shared by every module.

Each failure carries a short machine-readable ``code`` (for example
``"unknown-order"`` or ``"degenerate-series"``) so callers and the CLI can
branch on it without parsing messages.
"""


class AggrDmaError(ValueError):
    def __init__(self, code, detail=""):
        self.code = code
        self.detail = detail
        msg = code if not detail else f"{code}: {detail}"
        super().__init__(msg)
