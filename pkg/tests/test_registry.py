import pytest

import methods.registry as registry
from methods.protonet import ProtoNet
from methods.registry import (
    METHOD_REGISTRY,
    canonical_name,
    create_method,
    get_method,
    implemented_methods,
    register_method,
    reserved_methods,
)
from models.conv64f import Conv64FConfig
from utils.errors import ConfigurationError, UnavailableMethodError


@pytest.fixture
def scratch_registry(monkeypatch):
    """Registry copy that tests may mutate"""
    monkeypatch.setattr(registry, 'METHOD_REGISTRY', dict(METHOD_REGISTRY))
    return registry.METHOD_REGISTRY


def test_ten_methods_are_implemented():
    assert implemented_methods() == [
        'Baseline', 'Baseline++', 'MAML', 'R2D2', 'ANIL',
        'ProtoNet', 'RelationNet', 'DN4', 'ATL_Net', 'CovaMNet',
    ]
    assert set(reserved_methods()) == {'SKD_Model', 'RFS_Model', 'Versa', 'MTL', 'Leo', 'Feat'}


def test_every_entry_has_a_known_category():
    for entry in METHOD_REGISTRY.values():
        assert entry.category in registry.CATEGORIES


@pytest.mark.parametrize('name', ['Versa', 'Leo', 'Feat'])
def test_reserved_names_raise_with_alternatives(name):
    with pytest.raises(UnavailableMethodError) as info:
        get_method(name)
    message = str(info.value)
    assert 'reserved' in message
    for implemented in ('ProtoNet', 'DN4', 'MAML'):
        assert implemented in message


def test_unknown_name_raises():
    with pytest.raises(UnavailableMethodError) as info:
        create_method('SimpleShot')
    assert 'not a registered method' in str(info.value)


@pytest.mark.parametrize('alias, canonical', [
    ('Proto_Net', 'ProtoNet'),
    ('Relation Net', 'RelationNet'),
    ('ATLNet', 'ATL_Net'),
    ('BaselinePlusPlus', 'Baseline++'),
    ('DN4', 'DN4'),
])
def test_aliases(alias, canonical):
    assert canonical_name(alias) == canonical
    assert get_method(alias).name == canonical


def test_reference_numbers():
    assert get_method('ATL_Net').reference_accuracy == {1: 72.03, 5: 88.81}
    assert METHOD_REGISTRY['RFS_Model'].reference_accuracy is None
    assert [n for n, e in METHOD_REGISTRY.items() if e.caution] == ['MAML', 'ProtoNet', 'CovaMNet']


def test_create_method_passes_arguments():
    method = create_method('Proto_Net', n_way=3, backbone_config=Conv64FConfig(filters=8))
    assert isinstance(method, ProtoNet)
    assert method.n_way == 3


def test_register_fills_reserved_slot(scratch_registry):
    class Feat(ProtoNet):
        name = 'Feat'

    entry = register_method('Feat', Feat)
    assert entry.category == 'metric'
    assert entry.venue == 'CVPR 2020'
    assert entry.reference_accuracy == {1: 46.11, 5: 56.36}
    assert 'Feat' in registry.implemented_methods()
    assert isinstance(registry.create_method('Feat'), Feat)


def test_register_new_method_needs_category(scratch_registry):
    with pytest.raises(ConfigurationError):
        register_method('NewNet', ProtoNet)
    register_method('NewNet', ProtoNet, category='metric', venue='arXiv 2024')
    assert scratch_registry['NewNet'].implemented


def test_register_refuses_to_overwrite(scratch_registry):
    with pytest.raises(ConfigurationError):
        register_method('ProtoNet', ProtoNet)
    register_method('ProtoNet', ProtoNet, replace_existing=True)


def test_scratch_registry_does_not_leak():
    assert 'NewNet' not in METHOD_REGISTRY
    assert not METHOD_REGISTRY['Feat'].implemented
