"""Versioned structured-text model documents.

Documents are canonical JSON: sorted keys, fixed indentation, one trailing
newline.  Floats are written with Python's shortest-roundtrip repr, so a
write-read-write cycle is byte-identical and numeric state survives
bit-exactly.
"""

from __future__ import annotations

import json
from typing import Union

import numpy as np

from .autodiff import Mlp
from .classifier.rules import Frame, FramedRule
from .classifier.robust import ToyClassifier, AdvConfig
from .engine import (
    DecoderMap,
    IdentityMap,
    LatentSpace,
    MajorityRule,
    NbrModel,
    SliceNetworkRule,
    TableRule,
)
from .training import AutoencoderHyper, AutoencoderNbr, DecodedSliceRule, SurrogateSliceRule

FORMAT_VERSION = 1


class DocumentError(ValueError):
    """The document is malformed or from an unknown format version."""


def dump_document(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def parse_document(text: str) -> dict:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"not a model document: {exc}") from exc
    if not isinstance(payload, dict):
        raise DocumentError("model document must be a JSON object")
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise DocumentError(f"unsupported document version {version!r}")
    return payload


def _mlp_to_dict(net: Mlp) -> dict:
    return {
        "sizes": list(net.sizes),
        "activations": list(net.activations),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _mlp_from_dict(doc: dict) -> Mlp:
    sizes = doc["sizes"]
    activations = doc["activations"]
    head = activations[-1]
    hidden = activations[0] if len(activations) > 1 else "relu"
    net = Mlp(sizes, hidden=hidden, head=head)
    params = []
    for w, b in zip(doc["weights"], doc["biases"]):
        params.append(np.asarray(w, dtype=np.float64))
        params.append(np.asarray(b, dtype=np.float64))
    net.set_parameters(params)
    net.activations = list(activations)
    return net


def _rule_to_dict(rule) -> dict:
    if isinstance(rule, MajorityRule):
        return {
            "type": "majority",
            "target": rule.target,
            "middle_lo": rule.middle_lo,
            "middle_hi": rule.middle_hi,
            "invert": rule.invert,
        }
    if isinstance(rule, SliceNetworkRule):
        return {
            "type": "slice-network",
            "lo": rule.lo,
            "hi": rule.hi,
            "network": _mlp_to_dict(rule.network),
        }
    if isinstance(rule, TableRule):
        return {
            "type": "table",
            "dimension": rule.dimension,
            "values": rule.table.tolist(),
        }
    raise DocumentError(f"cannot serialize rule of type {type(rule).__name__}")


def _rule_from_dict(doc: dict):
    kind = doc.get("type")
    if kind == "majority":
        return MajorityRule(
            target=doc["target"],
            middle_lo=doc["middle_lo"],
            middle_hi=doc["middle_hi"],
            invert=doc["invert"],
        )
    if kind == "slice-network":
        return SliceNetworkRule(_mlp_from_dict(doc["network"]), doc["lo"], doc["hi"])
    if kind == "table":
        return TableRule(np.asarray(doc["values"], dtype=np.float64), doc["dimension"])
    raise DocumentError(f"unknown rule type {kind!r}")


def model_to_document(model: Union[NbrModel, AutoencoderNbr]) -> dict:
    if isinstance(model, AutoencoderNbr):
        return {
            "version": FORMAT_VERSION,
            "kind": "rule-model",
            "observation_map": {
                "type": "decoder",
                "observation_dim": model.observation_dim,
                "latent_dim": model.hyper.latent_dim,
                "decoder": _mlp_to_dict(model.decoder),
                "encoder": _mlp_to_dict(model.encoder),
                "binarize_latent": model.hyper.binarize_latent,
                "binarize_output": model.hyper.binarize_output,
            },
            "rules": [
                {"type": "slice-network", "lo": lo, "hi": hi, "network": _mlp_to_dict(net)}
                for net, (lo, hi) in zip(model.networks, model.slices)
            ],
            "weights": [float(b) for b in model.beliefs],
        }
    if not isinstance(model.observation_map, IdentityMap):
        raise DocumentError("decoder-map models serialize through AutoencoderNbr")
    return {
        "version": FORMAT_VERSION,
        "kind": "rule-model",
        "observation_map": {"type": "identity", "dim": model.observation_dim},
        "rules": [_rule_to_dict(rule) for rule in model.rules],
        "weights": [float(b) for b in model.beliefs],
    }


def document_to_model(payload: dict) -> Union[NbrModel, AutoencoderNbr]:
    if payload.get("kind") != "rule-model":
        raise DocumentError(f"expected a rule-model document, got {payload.get('kind')!r}")
    omap = payload["observation_map"]
    if omap["type"] == "identity":
        dim = omap["dim"]
        rules = tuple(_rule_from_dict(doc) for doc in payload["rules"])
        return NbrModel(
            LatentSpace(dim), IdentityMap(dim), rules, tuple(payload["weights"])
        )
    if omap["type"] == "decoder":
        hyper = AutoencoderHyper(
            latent_dim=omap["latent_dim"],
            binarize_latent=omap["binarize_latent"],
            binarize_output=omap["binarize_output"],
        )
        networks = []
        slices = []
        for doc in payload["rules"]:
            if doc.get("type") != "slice-network":
                raise DocumentError("decoder-map models carry slice-network rules")
            networks.append(_mlp_from_dict(doc["network"]))
            slices.append((doc["lo"], doc["hi"]))
        return AutoencoderNbr(
            encoder=_mlp_from_dict(omap["encoder"]),
            decoder=_mlp_from_dict(omap["decoder"]),
            networks=networks,
            slices=slices,
            beliefs=tuple(payload["weights"]),
            hyper=hyper,
            observation_dim=omap["observation_dim"],
        )
    raise DocumentError(f"unknown observation map {omap.get('type')!r}")


def classifier_to_document(classifier: ToyClassifier) -> dict:
    rules = []
    for rule in classifier.rules:
        doc = {
            "kind": rule.kind,
            "for_class": rule.for_class,
            "scale": rule.scale,
            "belief": rule.belief,
            "positive_count": rule.positive_count,
            "class_count": rule.class_count,
        }
        if rule.kind == "linear":
            doc["weight_vec"] = rule.weight_vec.tolist()
            doc["offset"] = rule.offset
        else:
            doc["center"] = rule.center.tolist()
            doc["radius"] = rule.radius
        rules.append(doc)
    return {
        "version": FORMAT_VERSION,
        "kind": "rule-bank",
        "num_classes": 2,
        "rules": rules,
        "beta_t": classifier.beta_t.tolist(),
        "train_points": classifier.train_points.tolist(),
        "train_labels": classifier.train_labels.tolist(),
    }


def document_to_classifier(payload: dict) -> ToyClassifier:
    if payload.get("kind") != "rule-bank":
        raise DocumentError(f"expected a rule-bank document, got {payload.get('kind')!r}")
    frame = Frame(payload["num_classes"], tuple((c,) for c in range(payload["num_classes"])))
    rules = []
    for doc in payload["rules"]:
        common = dict(
            frame=frame,
            for_class=doc["for_class"],
            kind=doc["kind"],
            scale=doc["scale"],
            belief=doc["belief"],
            positive_count=doc["positive_count"],
            class_count=doc["class_count"],
        )
        if doc["kind"] == "linear":
            rule = FramedRule(
                **common,
                weight_vec=np.asarray(doc["weight_vec"], dtype=np.float64),
                offset=doc["offset"],
            )
        else:
            rule = FramedRule(
                **common,
                center=np.asarray(doc["center"], dtype=np.float64),
                radius=doc["radius"],
            )
        rules.append(rule)
    return ToyClassifier(
        rules=rules,
        train_points=np.asarray(payload["train_points"], dtype=np.float64),
        train_labels=np.asarray(payload["train_labels"], dtype=int),
        beta_t=np.asarray(payload["beta_t"], dtype=np.float64),
        config=AdvConfig(),
    )


def save(path, obj) -> None:
    if isinstance(obj, ToyClassifier):
        payload = classifier_to_document(obj)
    else:
        payload = model_to_document(obj)
    with open(path, "w") as fh:
        fh.write(dump_document(payload))


def load(path):
    with open(path) as fh:
        payload = parse_document(fh.read())
    if payload.get("kind") == "rule-bank":
        return document_to_classifier(payload)
    return document_to_model(payload)
