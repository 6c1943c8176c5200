"""Exception types shared across the toolkit.

Every error carries a module name and a short machine-readable code so the
CLI can emit structured JSON on stderr.
"""


class ToolError(Exception):
    module = "kseq"

    def __init__(self, message, code="error"):
        super().__init__(message)
        self.code = code

    def to_json(self):
        return {"module": self.module, "code": self.code, "message": str(self)}


class DataError(ToolError):
    module = "data"


class MorphologyError(ToolError):
    module = "morphology"


class FeatureError(ToolError):
    module = "features"


class ClusterError(ToolError):
    module = "clustering"


class TokenizeError(ToolError):
    module = "tokenizer"


class MineError(ToolError):
    module = "seqmine"


class AnalysisError(ToolError):
    module = "analysis"


class SynthError(ToolError):
    module = "synth"


class CliError(ToolError):
    module = "cli"
