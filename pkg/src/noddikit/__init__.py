"""Tissue microstructure estimation from diffusion MRI.

The package implements the three-compartment orientation-dispersion
signal model, dictionary-based fitting (discrete parameter grids plus
nonnegative sparse solvers), and a two-stage unrolled estimation
network with hand-derived gradients, together with synthetic phantom
generation and evaluation metrics.

Submodules are imported lazily on attribute access, so ``import
noddikit`` stays cheap and the command-line tool can pin BLAS thread
pools before numpy ever loads.
"""

from importlib import import_module

__version__ = "0.1.0"

#: public name -> defining submodule
_EXPORTS = {
    # signal model
    "DiffusivityConfig": "signal", "TissueParams": "signal",
    "SignalModelError": "signal", "od_from_kappa": "signal",
    "kappa_from_od": "signal", "watson_density": "signal",
    "watson_tau1": "signal", "watson_tau1_table": "signal",
    "aic_signal": "signal", "aic_signal_table": "signal",
    "aec_signal": "signal", "aiso_signal": "signal",
    "synthesize": "signal", "DEFAULT_D_PAR": "signal",
    "DEFAULT_D_ISO": "signal",
    # quadrature
    "SphereQuadrature": "quadrature", "QuadratureError": "quadrature",
    "gauss_legendre_sphere": "quadrature",
    "default_quadrature": "quadrature", "fine_quadrature": "quadrature",
    # schemes
    "AcquisitionScheme": "scheme", "SchemeError": "scheme",
    "load_scheme": "scheme", "parse_scheme": "scheme",
    "save_scheme": "scheme", "format_scheme": "scheme",
    "electrostatic_directions": "scheme", "two_shell_60": "scheme",
    "dense_three_shell_90": "scheme", "BUILTIN_SCHEMES": "scheme",
    "resolve_scheme": "scheme",
    # dictionary
    "Dictionary": "dictionary", "ParamGrid": "dictionary",
    "OrientationSet": "dictionary", "DictionaryError": "dictionary",
    "default_grid": "dictionary", "build_dictionary": "dictionary",
    "build_expanded_dictionary": "dictionary",
    "save_dictionary": "dictionary", "load_dictionary": "dictionary",
    # solvers
    "MixtureFractions": "solvers", "SolverReport": "solvers",
    "SolverError": "solvers", "hard_threshold": "solvers",
    "spectral_norm": "solvers", "iht_solve": "solvers",
    "nnls_regularized": "solvers",
    # dictionary fitting
    "Microstructure": "amico", "TensorFit": "amico",
    "AmicoResult": "amico", "AmicoError": "amico", "dti_fit": "amico",
    "params_from_fractions": "amico", "amico_estimate": "amico",
    "amico_batch": "amico", "write_amico_csv": "amico",
    # training machinery
    "TrainConfig": "optim", "TrainHistory": "optim",
    "AdamState": "optim", "adam_init": "optim",
    # unrolled network
    "MednWeights": "medn", "ForwardTrace": "medn", "MednError": "medn",
    "init_weights": "medn", "default_init_dictionary": "medn",
    "forward": "medn", "forward_batch": "medn", "predict_batch": "medn",
    "loss": "medn", "backward": "medn", "adam_step": "medn",
    "train": "medn", "save_weights": "medn", "load_weights": "medn",
    # baseline network
    "MlpWeights": "mlp", "MlpTrace": "mlp", "init_mlp_weights": "mlp",
    "forward_mlp": "mlp", "backward_mlp": "mlp", "dropout_masks": "mlp",
    "mlp_baseline_train": "mlp", "mlp_baseline_predict": "mlp",
    "save_mlp_weights": "mlp", "load_mlp_weights": "mlp",
    # datasets
    "VoxelDataset": "data", "NoiseSpec": "data", "DataError": "data",
    "normalize_dwi": "data", "sample_params": "data", "add_noise": "data",
    "subsample_scheme": "data", "subsample_dataset": "data",
    "make_dataset": "data", "gold_standard_amico": "data",
    "save_dataset": "data", "load_dataset": "data",
    # metrics
    "EvalReport": "metrics", "TTestResult": "metrics",
    "MetricsError": "metrics", "QUANTITIES": "metrics",
    "paired_t_test": "metrics", "evaluate": "metrics",
    "format_report": "metrics", "write_report_csv": "metrics",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    try:
        module = _EXPORTS[name]
    except KeyError:
        raise AttributeError(
            f"module {__name__!r} has no attribute {name!r}") from None
    return getattr(import_module(f".{module}", __name__), name)


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
