import numpy as np
import pytest
import torch

from methods.atlnet import ATLNet, ThresholdNet, atl_scores, best_class_similarities, gated_similarity_sum
from methods.covamnet import CovaMNet, class_covariance, cova_scores, covariance_matrix
from methods.dn4 import DN4, dn4_scores, pool_class_descriptors
from methods.protonet import ProtoNet, compute_prototypes, proto_scores
from methods.relationnet import RelationModule, RelationNet, relation_scores
from models.conv64f import Conv64FConfig
from utils.errors import ConfigurationError, ParameterError

TINY_POOL4 = Conv64FConfig(filters=8)
TINY_POOL2 = Conv64FConfig(filters=8, pooling='pool2')


def _unit(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


# --- ProtoNet ---------------------------------------------------------------

def test_prototypes_and_scores_by_hand():
    support = torch.tensor([[0.0, 0.0], [2.0, 0.0], [0.0, 4.0], [0.0, 6.0]])
    labels = torch.tensor([0, 0, 1, 1])
    prototypes = compute_prototypes(support, labels, 2)
    assert torch.equal(prototypes, torch.tensor([[1.0, 0.0], [0.0, 5.0]]))

    scores = proto_scores(support, labels, torch.tensor([[1.0, 1.0]]), 2)
    assert torch.allclose(scores, torch.tensor([[-1.0, -17.0]]))


def test_proto_scores_pick_nearest_mean():
    rng = np.random.default_rng(0)
    support = torch.from_numpy(rng.normal(size=(15, 10)))
    labels = torch.arange(5).repeat_interleave(3)
    query = torch.from_numpy(rng.normal(size=(8, 10)))
    means = support.view(5, 3, 10).mean(dim=1)
    expected = torch.cdist(query, means).argmin(dim=1)
    assert torch.equal(proto_scores(support, labels, query, 5).argmax(dim=1), expected)


def test_proto_predictions_survive_rotation():
    gen = torch.Generator().manual_seed(3)
    support = torch.randn(15, 6, generator=gen, dtype=torch.float64)
    query = torch.randn(10, 6, generator=gen, dtype=torch.float64)
    labels = torch.arange(5).repeat_interleave(3)
    rotation, _ = torch.linalg.qr(torch.randn(6, 6, generator=gen, dtype=torch.float64))
    before = proto_scores(support, labels, query, 5)
    after = proto_scores(support @ rotation, labels, query @ rotation, 5)
    assert torch.allclose(before, after)
    assert torch.equal(before.argmax(dim=1), after.argmax(dim=1))


# --- DN4 --------------------------------------------------------------------

def _dn4_brute_force(query, support, k):
    scores = np.zeros((query.shape[0], support.shape[0]))
    for qi, q in enumerate(query):
        for c, s in enumerate(support):
            for descriptor in q:
                sims = sorted((_unit(descriptor) @ _unit(x) for x in s), reverse=True)
                scores[qi, c] += sum(sims[:k])
    return scores


def test_dn4_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n_query, n_way = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        m, s, d = int(rng.integers(1, 6)), int(rng.integers(1, 8)), int(rng.integers(2, 6))
        k = int(rng.integers(1, s + 1))
        query = rng.normal(size=(n_query, m, d))
        support = rng.normal(size=(n_way, s, d))
        scores = dn4_scores(torch.from_numpy(query), torch.from_numpy(support), k).numpy()
        np.testing.assert_allclose(scores, _dn4_brute_force(query, support, k), atol=1e-6)


def test_dn4_chunking_is_transparent():
    query = torch.randn(19, 6, 5, dtype=torch.float64)
    support = torch.randn(3, 7, 5, dtype=torch.float64)
    chunked = dn4_scores(query, support, 2)
    whole = torch.cat([dn4_scores(query[i:i + 1], support, 2) for i in range(19)])
    assert torch.allclose(chunked, whole)


def test_dn4_k_out_of_range():
    query, support = torch.randn(2, 4, 3), torch.randn(2, 5, 3)
    with pytest.raises(ParameterError):
        dn4_scores(query, support, 6)
    with pytest.raises(ParameterError):
        dn4_scores(query, support, 0)


def test_pool_class_descriptors_groups_by_label():
    maps = torch.randn(4, 3, 2, 2)
    labels = torch.tensor([1, 0, 1, 0])
    pooled = pool_class_descriptors(maps, labels, 2)
    assert pooled.shape == (2, 8, 3)
    assert torch.equal(pooled[0, 0], maps[1, :, 0, 0])
    assert torch.equal(pooled[1, 4], maps[2, :, 0, 0])


# --- CovaMNet ---------------------------------------------------------------

def test_covariance_matches_numpy():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 6))
    np.testing.assert_allclose(covariance_matrix(torch.from_numpy(x)).numpy(), np.cov(x, rowvar=False), atol=1e-12)
    assert torch.count_nonzero(covariance_matrix(torch.randn(1, 4))) == 0


def test_class_covariance_is_positive_definite():
    rng = np.random.default_rng(3)
    for n in (1, 3, 50):
        cov = class_covariance(torch.from_numpy(rng.normal(size=(n, 8))))
        assert torch.allclose(cov, cov.t())
        assert torch.linalg.eigvalsh(cov).min() > 0


def test_cova_scores_match_numpy():
    rng = np.random.default_rng(4)
    support = rng.normal(size=(3, 12, 5))
    query = rng.normal(size=(2, 7, 5))

    expected = np.zeros((2, 3))
    for c in range(3):
        cov = np.cov(support[c], rowvar=False)
        cov = cov + max(1e-3 * np.trace(cov) / 5, 1e-6) * np.eye(5)
        for qi in range(2):
            q = _unit(query[qi] - query[qi].mean(axis=0))
            expected[qi, c] = np.mean([v @ cov @ v for v in q])

    scores = cova_scores(torch.from_numpy(support), torch.from_numpy(query)).numpy()
    np.testing.assert_allclose(scores, expected, rtol=1e-6, atol=1e-9)


# --- ATL_Net ----------------------------------------------------------------

def test_threshold_net_outputs_open_interval():
    tnet = ThresholdNet(64, 32).double()
    thresholds = tnet(torch.randn(10_000, 64, dtype=torch.float64))
    assert thresholds.shape == (10_000,)
    assert thresholds.min() > 0 and thresholds.max() < 1


def test_open_gate_reduces_to_similarity_sum():
    sims = torch.rand(4, 3, 10) * 0.7 + 0.3
    zeros = torch.zeros(4, 1, 10)
    assert torch.allclose(gated_similarity_sum(sims, zeros, hard=True), sims.sum(dim=-1))
    assert torch.allclose(gated_similarity_sum(sims, zeros, tau=200.0), sims.sum(dim=-1), atol=1e-6)


def test_gate_hand_computed():
    sims = torch.tensor([[0.9, 0.2], [0.4, 0.6]])
    scores = gated_similarity_sum(sims, torch.tensor(0.5), tau=25.0)
    assert torch.allclose(scores, torch.tensor([0.900, 0.585]), atol=0.02)


def test_best_class_similarities_use_max():
    query = torch.randn(2, 3, 4, dtype=torch.float64)
    support = torch.randn(2, 5, 4, dtype=torch.float64)
    best = best_class_similarities(query, support)
    assert best.shape == (2, 2, 3)
    q = torch.nn.functional.normalize(query, dim=-1)
    s = torch.nn.functional.normalize(support, dim=-1)
    assert torch.isclose(best[1, 0, 2], (s[0] @ q[1, 2]).max())


def test_atl_scores_shape():
    tnet = ThresholdNet(4, 8)
    scores = atl_scores(torch.randn(5, 6, 4), torch.randn(3, 9, 4), tnet)
    assert scores.shape == (5, 3)


# --- RelationNet ------------------------------------------------------------

def test_relation_scores_in_unit_interval():
    relation = RelationModule(feature_channels=8, feature_hw=(21, 21), hidden_channels=8)
    support = torch.randn(6, 8, 21, 21)
    labels = torch.tensor([0, 0, 1, 1, 2, 2])
    scores = relation_scores(support, labels, torch.randn(4, 8, 21, 21), relation, 3)
    assert scores.shape == (4, 3)
    assert scores.min() >= 0 and scores.max() <= 1


def test_relation_module_rejects_wrong_pairs():
    relation = RelationModule(feature_channels=8, feature_hw=(21, 21))
    with pytest.raises(ConfigurationError):
        relation(torch.randn(2, 8, 21, 21))
    with pytest.raises(ConfigurationError):
        relation(torch.randn(2, 16, 5, 5))


def test_relation_net_uses_squared_error(make_episode):
    method = RelationNet(n_way=3, backbone_config=TINY_POOL2)
    batch = make_episode(n_way=3, k_shot=1, n_query=2).to_batch()
    scores, loss = method.set_forward_loss(batch)
    targets = torch.nn.functional.one_hot(batch.query_y, 3).float()
    assert torch.isclose(loss, ((scores - targets) ** 2).mean())


# --- all metric methods -----------------------------------------------------

@pytest.mark.parametrize('method_cls, config', [
    (ProtoNet, TINY_POOL4),
    (RelationNet, TINY_POOL2),
    (DN4, TINY_POOL2),
    (CovaMNet, TINY_POOL2),
    (ATLNet, TINY_POOL2),
])
@pytest.mark.parametrize('k_shot', [1, 2])
def test_set_forward_shapes(method_cls, config, k_shot, make_episode):
    method = method_cls(n_way=3, backbone_config=config)
    batch = make_episode(n_way=3, k_shot=k_shot, n_query=2).to_batch()
    logits, loss = method.set_forward_loss(batch)
    assert logits.shape == (6, 3)
    assert torch.isfinite(loss)
    loss.backward()
    assert method.predict(batch).shape == (6,)


def test_atl_hard_gate_only_at_evaluation(make_episode):
    method = ATLNet(n_way=3, backbone_config=TINY_POOL2, hparams={'hard_gate_eval': True})
    batch = make_episode(n_way=3, k_shot=1, n_query=1).to_batch()
    method.eval()
    with torch.no_grad():
        hard = method.set_forward(batch)
        method.hparams['hard_gate_eval'] = False
        soft = method.set_forward(batch)
    assert hard.shape == soft.shape == (3, 3)
    assert not torch.allclose(hard, soft)


def test_dn4_self_similarity_is_maximal():
    k = 3
    query = torch.nn.functional.normalize(torch.randn(1, 9, 6, dtype=torch.float64), dim=-1)
    class_a = query[0].repeat(k, 1)
    class_b = torch.randn(27, 6, dtype=torch.float64)
    scores = dn4_scores(query, torch.stack([class_a, class_b]), k)
    assert scores[0, 0] == pytest.approx(9 * k)
    assert scores[0, 1] < scores[0, 0]


def test_cova_identical_support_ties():
    support = torch.ones(3, 10, 5, dtype=torch.float64) * torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64)[:, None, None]
    cov = class_covariance(support[0])
    assert torch.allclose(cov, 1e-6 * torch.eye(5, dtype=torch.float64))
    scores = cova_scores(support, torch.randn(4, 7, 5, dtype=torch.float64))
    assert torch.allclose(scores, scores[:, :1].expand_as(scores))


def test_cova_prefers_matching_anisotropic_cluster():
    rng = np.random.default_rng(5)
    spread_a = np.array([3.0, 0.3, 0.3, 0.3, 0.3])
    spread_b = np.array([0.3, 3.0, 0.3, 0.3, 0.3])
    support = torch.from_numpy(np.stack([rng.normal(size=(40, 5)) * spread_a,
                                         rng.normal(size=(40, 5)) * spread_b]))
    wins = 0
    for _ in range(1000):
        query = torch.from_numpy(rng.normal(size=(1, 9, 5)) * spread_a)
        scores = cova_scores(support, query)
        wins += int(scores[0, 0] > scores[0, 1])
    assert wins >= 950


def _double_batch(batch):
    batch.support_x = batch.support_x.double()
    batch.query_x = batch.query_x.double()
    return batch


@pytest.mark.parametrize('method_cls', [ATLNet, RelationNet])
def test_loss_reaches_backbone(method_cls, make_episode):
    method = method_cls(n_way=3, backbone_config=TINY_POOL2).double()
    batch = _double_batch(make_episode(n_way=3, k_shot=1, n_query=2).to_batch())
    _, loss = method.set_forward_loss(batch)
    loss.backward()
    for name, parameter in method.backbone.named_parameters():
        assert parameter.grad is not None, name
        assert parameter.grad.abs().sum() > 0, name


@pytest.mark.parametrize('method_cls', [ATLNet, RelationNet])
def test_backbone_gradient_matches_finite_differences(method_cls, make_episode):
    method = method_cls(n_way=3, backbone_config=TINY_POOL2).double()
    batch = _double_batch(make_episode(n_way=3, k_shot=1, n_query=2).to_batch())
    weight = method.backbone.features[0].weight
    _, loss = method.set_forward_loss(batch)
    analytic = torch.autograd.grad(loss, weight)[0]

    eps = 1e-6
    for index in [(0, 0, 0, 0), (3, 0, 1, 2), (7, 0, 2, 1)]:
        with torch.no_grad():
            original = weight[index].item()
            weight[index] = original + eps
            plus = method.set_forward_loss(batch)[1].item()
            weight[index] = original - eps
            minus = method.set_forward_loss(batch)[1].item()
            weight[index] = original
        numeric = (plus - minus) / (2 * eps)
        assert numeric == pytest.approx(analytic[index].item(), rel=1e-3, abs=1e-7)
