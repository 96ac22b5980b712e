"""Obfuscation-robust feature selection, sensitive behavior subgraphs and GNN
family classification. Thin wrappers over the native core in ``dwfs._core``."""

import json
import os

from . import _core
from ._core import DwfsError

__all__ = [
    "DwfsError",
    "score",
    "extract_sbs",
    "family_metrics",
    "Pipeline",
]


def score(importances, accuracy, obf_importances, obf_accuracy, beta=0.5, theta=None):
    """Composite DWFS scores from precomputed importance profiles."""
    return json.loads(_core.score(list(importances), accuracy, [list(v) for v in obf_importances],
                                  list(obf_accuracy), beta, theta))


def extract_sbs(graph, hops=0, origin="sensitive"):
    """Sensitive behavior subgraph of a call graph given as a dict (graph file format)."""
    return json.loads(_core.extract_sbs(json.dumps(graph), hops, origin))


def family_metrics(y_true, y_pred, classes):
    """Confusion matrix and per-family one-vs-rest metrics."""
    return json.loads(_core.family_metrics(list(y_true), list(y_pred), classes))


class Pipeline:
    """Runs pipeline steps for a run config (same keys as the CLI's JSON config)."""

    def __init__(self, config=None, base_dir=""):
        self.config = dict(config or {})
        self.base_dir = os.fspath(base_dir)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls(json.load(f), os.path.dirname(os.path.abspath(path)))

    def _text(self):
        return json.dumps(self.config)

    def gen(self):
        return _core.gen(self._text(), self.base_dir)

    def select(self):
        return json.loads(_core.select(self._text(), self.base_dir))

    def sbs(self):
        return json.loads(_core.sbs(self._text(), self.base_dir))

    def train(self, model):
        return _core.train(self._text(), model, self.base_dir)

    def evaluate(self, model):
        return json.loads(_core.evaluate(self._text(), model, self.base_dir))

    def report(self):
        return json.loads(_core.report(self._text(), self.base_dir))

    def run(self):
        self.gen()
        self.select()
        self.sbs()
        models = self.config.get("models", ["gat", "sage", "gcn"])
        for m in models:
            self.train(m)
        for m in models:
            self.evaluate(m)
        return self.report()
