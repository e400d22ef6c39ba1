"""Censored-likelihood models of dealer quotes and client reservation values in RFQ markets."""

from .distributions import ClientParams, ParameterError, SepParams, sep_moment, sep_pdf, sep_sample
from .fitting import FitResult, FitSettings, fit_cell, fit_model
from .likelihood import LikelihoodError, loglik_full, loglik_partial, total_loglik
from .model import (
    ModelSpec,
    OtherRule,
    Outcome,
    Pooling,
    RecordBatch,
    RfqRecord,
    RfqTable,
    Side,
    SideParams,
    SubOutcome,
    Variant,
)
from .simulate import SimConfig, outcome_frequencies, simulate_dataset, simulate_rfq

__version__ = "0.1.0"

__all__ = [
    "ClientParams", "FitResult", "FitSettings", "LikelihoodError", "ModelSpec", "OtherRule", "Outcome",
    "ParameterError", "Pooling", "RecordBatch", "RfqRecord", "RfqTable", "SepParams", "Side",
    "SideParams", "SimConfig", "SubOutcome", "Variant", "fit_cell", "fit_model", "loglik_full",
    "loglik_partial", "outcome_frequencies", "sep_moment", "sep_pdf", "sep_sample",
    "simulate_dataset", "simulate_rfq", "total_loglik",
]
