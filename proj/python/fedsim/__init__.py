"""Federated learning simulator for quality-inspection image classification.

The heavy lifting lives in the compiled ``_core`` module; this package just
re-exports its surface.
"""

from ._core import (
    Params,
    aggregate,
    classifier_names,
    decode_params,
    encode_params,
    evaluate,
    feature_names,
    forward,
    generate_client_shard,
    generate_external_testset,
    init_params,
    label_name,
    local_train,
    loss_and_grad,
    sgd_apply,
    simulate,
    zero_params,
)

__all__ = [
    "Params",
    "aggregate",
    "classifier_names",
    "decode_params",
    "encode_params",
    "evaluate",
    "feature_names",
    "forward",
    "generate_client_shard",
    "generate_external_testset",
    "init_params",
    "label_name",
    "local_train",
    "loss_and_grad",
    "sgd_apply",
    "simulate",
    "zero_params",
]

__version__ = "0.1.0"
