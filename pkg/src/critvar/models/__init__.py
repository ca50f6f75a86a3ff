"""Classifiers and their building blocks.

Submodules load on first attribute access, so that light users such as the
``paths`` command do not pay for importing scikit-learn.
"""
import importlib

_EXPORTS = {
    "base": ("TrainingDiverged", "VariableClassifier", "VariableSample", "check_samples"),
    "estimators": ("MODELS", "BRGCNClassifier", "ConvGNNClassifier", "MLPVariableClassifier",
                   "TreeLSTMClassifier"),
    "gnn": ("GnnParams", "brgcn_forward", "convgnn_forward", "count_propagation_paths",
            "propagation_blocks"),
    "heads": ("MlpParams", "OutputParams", "classify", "mlp_forward", "output_logit", "pool", "predict"),
    "treelstm": ("ForestBatch", "TreeLstmParams", "tree_lstm_forest", "tree_lstm_root"),
}
_WHERE = {name: mod for mod, names in _EXPORTS.items() for name in names}
__all__ = sorted(_WHERE)


def __getattr__(name):
    mod = _WHERE.get(name)
    if mod is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    value = getattr(importlib.import_module(f".{mod}", __name__), name)
    globals()[name] = value
    return value


def __dir__():
    return __all__
