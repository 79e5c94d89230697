#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Method registry: name -> (category, factory, default hyperparameters) plus the
published comparison numbers for every model of the benchmark table.

Reserved names have no factory. Asking for one raises UnavailableMethodError;
register_method() fills the slot when an implementation arrives.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from methods.atlnet import ATLNet
from methods.baseline import Baseline, BaselinePlusPlus
from methods.base import FewShotMethod
from methods.covamnet import CovaMNet
from methods.dn4 import DN4
from methods.maml import ANIL, MAML
from methods.protonet import ProtoNet
from methods.r2d2 import R2D2
from methods.relationnet import RelationNet
from utils.errors import ConfigurationError, UnavailableMethodError

CATEGORIES = ('fine-tuning', 'meta', 'metric')
BACKBONE_NAME = 'Conv64F'


@dataclass
class MethodEntry:
    """One row of the registry"""
    name: str
    category: str
    venue: str
    factory: Optional[Callable[..., FewShotMethod]] = None
    reference_accuracy: Optional[Dict[int, float]] = None  # k_shot -> % (5-way)
    reference_runtime: Optional[Dict[int, float]] = None  # k_shot -> minutes
    caution: bool = False
    default_hparams: Dict = field(default_factory=dict)

    @property
    def implemented(self) -> bool:
        return self.factory is not None


def _entry(name, category, venue, factory, acc, runtime, caution=False) -> MethodEntry:
    return MethodEntry(
        name=name,
        category=category,
        venue=venue,
        factory=factory,
        reference_accuracy={1: acc[0], 5: acc[1]} if acc else None,
        reference_runtime={1: runtime[0], 5: runtime[1]} if runtime else None,
        caution=caution,
        default_hparams=dict(factory.DEFAULT_HPARAMS) if factory else {},
    )


METHOD_REGISTRY: Dict[str, MethodEntry] = {
    "Baseline": _entry("Baseline", 'fine-tuning', "ICLR 2019", Baseline, (54.44, 83.13), (0.9, 2.18)),
    "Baseline++": _entry("Baseline++", 'fine-tuning', "ICLR 2019", BaselinePlusPlus, (59.98, 86.37), (5.85, 15.27)),
    "SKD_Model": _entry("SKD_Model", 'fine-tuning', "arXiv 2020", None, (57.92, 78.39), (0.48, 0.52)),
    "RFS_Model": _entry("RFS_Model", 'fine-tuning', "ECCV 2020", None, None, None),
    "MAML": _entry("MAML", 'meta', "ICML 2017", MAML, (19.87, 60.67), (0.1, 0.18), caution=True),
    "Versa": _entry("Versa", 'meta', "ICLR 2019", None, (66.96, 68.01), (0.72, 0.76)),
    "R2D2": _entry("R2D2", 'meta', "ICLR 2019", R2D2, (63.99, 68.88), (0.58, 0.68)),
    "MTL": _entry("MTL", 'meta', "CVPR 2019", None, (18.13, 47.07), (0.08, 0.1)),
    "Leo": _entry("Leo", 'meta', "ICLR 2019", None, (36.00, 44.00), (0.08, 0.1)),
    "ANIL": _entry("ANIL", 'meta', "ICLR 2020", ANIL, (20.99, 61.91), (0.62, 0.84)),
    "ProtoNet": _entry("ProtoNet", 'metric', "NeurIPS 2017", ProtoNet, (39.68, 42.72), (0.46, 0.52), caution=True),
    "Feat": _entry("Feat", 'metric', "CVPR 2020", None, (46.11, 56.36), (0.6, 0.74)),
    "RelationNet": _entry("RelationNet", 'metric', "CVPR 2018", RelationNet, (64.84, 77.51), (0.64, 0.78)),
    "DN4": _entry("DN4", 'metric', "CVPR 2019", DN4, (67.37, 85.15), (0.64, 0.8)),
    "ATL_Net": _entry("ATL_Net", 'metric', "IJCAI 2020", ATLNet, (72.03, 88.81), (0.63, 0.76)),
    "CovaMNet": _entry("CovaMNet", 'metric', "AAAI 2019", CovaMNet, (58.75, 45.75), (0.62, 0.76), caution=True),
}

# Spellings seen in configs and in the published tables
ALIASES = {
    "Proto_Net": "ProtoNet",
    "Relation Net": "RelationNet",
    "Relation_Net": "RelationNet",
    "ATLNet": "ATL_Net",
    "BaselinePlusPlus": "Baseline++",
}


def canonical_name(name: str) -> str:
    return ALIASES.get(name, name)


def implemented_methods() -> List[str]:
    return [name for name, entry in METHOD_REGISTRY.items() if entry.implemented]


def reserved_methods() -> List[str]:
    return [name for name, entry in METHOD_REGISTRY.items() if not entry.implemented]


def get_method(name: str) -> MethodEntry:
    """
    Look up a registry entry

    Raises:
        UnavailableMethodError: unknown name, or a reserved name without an implementation
    """
    entry = METHOD_REGISTRY.get(canonical_name(name))
    if entry is None:
        raise UnavailableMethodError(name, implemented_methods())
    if not entry.implemented:
        raise UnavailableMethodError(entry.name, implemented_methods(), reserved=True)
    return entry


def create_method(name: str, **kwargs) -> FewShotMethod:
    """Instantiate a registered method; kwargs go to its constructor"""
    return get_method(name).factory(**kwargs)


def register_method(name: str, factory: Callable[..., FewShotMethod], category: Optional[str] = None,
                    venue: str = "", replace_existing: bool = False) -> MethodEntry:
    """
    Add a method, or fill the slot of a reserved one

    Args:
        name: Registry key
        factory: Class (or callable) building the method
        category: One of CATEGORIES; taken from the reserved slot when omitted
        venue: Publication venue shown in reports
        replace_existing: Allow overwriting an implemented entry
    """
    existing = METHOD_REGISTRY.get(name)
    if existing is not None and existing.implemented and not replace_existing:
        raise ConfigurationError(f"Method '{name}' is already registered")
    category = category or (existing.category if existing else None)
    if category not in CATEGORIES:
        raise ConfigurationError(f"category must be one of {CATEGORIES}, got {category!r}")

    defaults = dict(getattr(factory, 'DEFAULT_HPARAMS', {}))
    if existing is not None:
        entry = replace(existing, factory=factory, category=category,
                        venue=venue or existing.venue, default_hparams=defaults)
    else:
        entry = MethodEntry(name=name, category=category, venue=venue, factory=factory,
                            default_hparams=defaults)
    METHOD_REGISTRY[name] = entry
    return entry

