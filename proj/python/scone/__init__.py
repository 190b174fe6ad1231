"""Margin-constrained joint OOD generalization and detection."""

from ._scone import (
    ConfigError,
    DomainError,
    FormatError,
    MlpModel,
    ShapeError,
    TrainingError,
    auroc,
    check_linear_case,
    config_echo,
    detect,
    energy,
    eta_bound,
    fpr_at_tpr,
    gen_synthetic,
    gradcheck,
    init_model,
    load_model,
    loss_cls,
    run,
    select_margin,
    train,
    two_class_energy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
