import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from malcl import ContinualClassifier
from malcl.errors import ConfigurationError
from malcl.model import MergedConfig, MergedGenerativeClassifier, MLPConfig, gaussian_kl
from malcl.model.vae import GAUSSIAN_MIXTURE
from malcl.strategies import (
    REGISTRY,
    ROW_ORDER,
    BIRConfig,
    EWCState,
    LwFConfig,
    OnlineEWCState,
    PartialJointReplay,
    PJRStore,
    ReplayBuffer,
    SIState,
    TeacherSnapshot,
    agem_project,
    bir_step,
    compute_fisher_diagonal,
    distill_targets,
    er_step,
    er_update_buffer,
    ewc_online_consolidate,
    ewc_online_penalty,
    ewc_penalty,
    gr_task_loss,
    herding_order,
    icarl_classify,
    icarl_construct_exemplars,
    icarl_loss,
    icarl_reduce_exemplars,
    lwf_loss,
    make_strategy,
    mix_losses,
    parse_strategy,
    pjr_sample,
    replay_ratio,
    rtf_loss,
    si_consolidate,
    si_penalty,
    si_track,
    strategy_dispatch,
)
from malcl.strategies.base import TaskContext
from malcl.strategies.generative import DISTILL, HARD_LABELS, label_replay, merged_replay
from malcl.strategies.regularization import _sample_labels
from oracles import exhaustive_herding


def blobs(n_classes=4, per_class=30, dim=6, seed=0, spread=4.0):
    r = np.random.default_rng(seed)
    centres = r.normal(scale=spread, size=(n_classes, dim))
    X = np.concatenate([c + r.normal(size=(per_class, dim)) for c in centres]).astype(np.float32)
    y = np.repeat(np.arange(n_classes), per_class)
    return X, y


def tiny_learner(strategy, scenario="class_il", params=None, **kw):
    defaults = dict(hidden_widths=(16, 8), epochs=2, batch_size=16, dropout_rate=0.0, random_state=0)
    defaults.update(kw)
    return ContinualClassifier(strategy=strategy, strategy_params=params, scenario=scenario, **defaults)


def run_tasks(clf, X, y, tasks, scenario="class_il"):
    classes = np.unique(y)
    for task in tasks:
        sel = np.isin(y, task)
        clf.partial_fit(X[sel], y[sel], classes=classes,
                        active_classes=task if scenario == "task_il" else None)
    return clf


def context(n_units=4, active=(0, 1, 2, 3), scenario="class_il", task_id=0, seed=0):
    return TaskContext(task_id=task_id, scenario=scenario, n_units=n_units, new_classes=tuple(active),
                       active=tuple(active), previous_classes=(), task_masks={task_id: tuple(active)},
                       batch_size=8, rng=np.random.default_rng(seed), generator=torch.Generator().manual_seed(seed))


# -- registry and dispatch --------------------------------------------------------

def test_registry_covers_roster():
    assert set(REGISTRY) == set(ROW_ORDER)
    assert len(REGISTRY) == 14
    for name in REGISTRY:
        assert make_strategy(name).name == name


def test_parse_strategy():
    assert parse_strategy("pjr:0.2") == ("pjr", {"fraction": 0.2})
    assert parse_strategy(" EWC ") == ("ewc", {})
    with pytest.raises(ConfigurationError):
        parse_strategy("bogus")
    with pytest.raises(ConfigurationError):
        parse_strategy("ewc:3")
    with pytest.raises(ConfigurationError):
        parse_strategy("pjr:abc")


def test_dispatch_rejects_invalid_pairings():
    for scenario in ("task_il", "domain_il"):
        with pytest.raises(ConfigurationError, match="icarl"):
            strategy_dispatch("icarl", scenario)
    with pytest.raises(ConfigurationError):
        strategy_dispatch("none", "object_il")
    with pytest.raises(ConfigurationError):
        make_strategy("ewc", nonsense=1)
    assert strategy_dispatch("icarl", "class_il").label == "iCaRL"


def test_pjr_fraction_validation():
    with pytest.raises(ConfigurationError):
        PartialJointReplay(1.5)
    assert PartialJointReplay(0.2).label == "PJR-20%"
    assert PartialJointReplay(0.01).label == "PJR-1%"


def test_none_hooks_are_noops():
    X, y = blobs()
    s = make_strategy("none")
    clf = tiny_learner("none")
    clf.partial_fit(X[:30], y[:30], classes=np.arange(4))
    ctx = clf._context(1, [1])
    assert s.before_task(clf, ctx, X[30:60], y[30:60]) is None
    x = torch.from_numpy(X[30:60])
    yy = torch.from_numpy(y[30:60])
    t = torch.ones(30, dtype=torch.long)
    torch.testing.assert_close(s.batch_loss(clf, x, yy, t, ctx), s.task_loss(clf.model_, x, yy, t, ctx))
    assert clf.ledger_[0]["n_extra"] == 0


def test_joint_before_task_adds_all_past_data():
    X, y = blobs()
    clf = run_tasks(tiny_learner("joint"), X, y, [[0], [1], [2]])
    assert [e["n_extra"] for e in clf.ledger_] == [0, 30, 60]


def test_ewc_after_task_appends_one_anchor():
    X, y = blobs()
    clf = tiny_learner("ewc", params={"fisher_samples": 32})
    for k, task in enumerate([[0], [1], [2]], start=1):
        run_tasks(clf, X, y, [task])
        assert len(clf.strategy_.state.anchors) == k


# -- EWC ---------------------------------------------------------------------

def test_ewc_penalty_examples():
    theta = torch.tensor([1.0, 2.0])
    state = EWCState(lam=1.0, anchors=[(theta.clone(), torch.tensor([3.0, 4.0]))] * 2)
    assert float(ewc_penalty(theta, state)) == 0.0
    one = EWCState(lam=1.0, anchors=[(torch.tensor([0.0]), torch.tensor([2.0]))])
    assert float(ewc_penalty(torch.tensor([1.0]), one)) == 1.0
    zero = EWCState(lam=0.0, anchors=[(torch.tensor([0.0]), torch.tensor([2.0]))])
    assert float(ewc_penalty(torch.tensor([5.0]), zero)) == 0.0


def test_fisher_dead_parameter_is_zero():
    lin = torch.nn.Linear(3, 2)
    x = torch.randn(20, 3)
    x[:, 1] = 0.0
    F = compute_fisher_diagonal(lin, x, None, [0, 1], generator=torch.Generator().manual_seed(0))
    w = F[:6].view(2, 3)
    assert torch.all(w[:, 1] == 0) and torch.all(F >= 0)


def test_fisher_single_logistic_hand_case():
    torch.manual_seed(0)
    lin = torch.nn.Linear(2, 2)
    x = torch.tensor([[0.5, -1.5]])
    g = torch.Generator().manual_seed(3)
    F = compute_fisher_diagonal(lin, x, None, [0, 1], generator=g)
    y = int(_sample_labels(lin, x, [0, 1], torch.Generator().manual_seed(3))[0])
    with torch.no_grad():
        p = torch.softmax(lin(x)[0], 0)
    onehot = torch.zeros(2)
    onehot[y] = 1.0
    dz = onehot - p                                     # d log p_y / d logits
    hand = torch.cat([(dz[:, None] * x[0][None, :]).reshape(-1), dz]) ** 2
    torch.testing.assert_close(F, hand)


def test_fisher_statistical_consistency():
    torch.manual_seed(0)
    net = torch.nn.Sequential(torch.nn.Linear(4, 6), torch.nn.Tanh(), torch.nn.Linear(6, 3))
    r = torch.Generator().manual_seed(0)
    xa, xb = torch.randn(400, 4, generator=r), torch.randn(800, 4, generator=r)
    Fa = compute_fisher_diagonal(net, xa, None, [0, 1, 2], n_estimate=0, generator=torch.Generator().manual_seed(1))
    Fb = compute_fisher_diagonal(net, xb, None, [0, 1, 2], n_estimate=0, generator=torch.Generator().manual_seed(2))
    assert float((Fa - Fb).abs().sum() / Fb.sum()) < 0.2


def test_fisher_errors():
    lin = torch.nn.Linear(2, 2)
    with pytest.raises(ValueError):
        compute_fisher_diagonal(lin, torch.zeros(0, 2), None, [0, 1])
    with pytest.raises(ValueError):
        compute_fisher_diagonal(lin, torch.zeros(2, 2), None, [0, 1], mode="empirical")


def test_online_ewc_examples():
    F = torch.tensor([1.0, 3.0])
    s = OnlineEWCState(lam=1.0, gamma=1.0)
    ewc_online_consolidate(s, F, torch.zeros(2))
    ewc_online_consolidate(s, F, torch.zeros(2))
    torch.testing.assert_close(s.fisher_running, 2 * F)
    assert float(ewc_online_penalty(torch.zeros(2), s)) == 0.0
    assert float(ewc_online_penalty(torch.tensor([1.0, 0.0]), s)) == 2.0


def test_online_ewc_decay():
    s = OnlineEWCState(gamma=0.5)
    for _ in range(3):
        ewc_online_consolidate(s, torch.ones(1))
    torch.testing.assert_close(s.fisher_running, torch.tensor([1.75]))


def state_tensors(state):
    return [v for v in vars(state).values() if isinstance(v, torch.Tensor)]


def test_online_ewc_storage_constant():
    s = OnlineEWCState()
    ewc_online_consolidate(s, torch.rand(50), torch.rand(50))
    after_one = [t.numel() for t in state_tensors(s)]
    for _ in range(4):
        ewc_online_consolidate(s, torch.rand(50), torch.rand(50))
    assert [t.numel() for t in state_tensors(s)] == after_one == [50, 50]


# -- SI ----------------------------------------------------------------------

def test_si_no_movement_keeps_importance():
    s = SIState(xi=0.1)
    s.theta_start = torch.tensor([1.0])
    si_consolidate(s, torch.tensor([1.0]))
    torch.testing.assert_close(s.importance, torch.zeros(1))
    s.importance = torch.tensor([0.7])
    si_track(s, torch.tensor([5.0]), torch.tensor([0.0]))
    si_consolidate(s, torch.tensor([1.0]))
    torch.testing.assert_close(s.importance, torch.tensor([0.7]))


def test_si_hand_path_integral():
    # loss theta^2, SGD lr 0.25 from theta = 1: two steps to 0.5 then 0.25
    s = SIState(c=1.0, xi=0.1)
    s.theta_start = torch.tensor([1.0])
    theta = torch.tensor([1.0])
    for _ in range(2):
        g = 2 * theta
        new = theta - 0.25 * g
        si_track(s, g, new - theta)
        theta = new
    torch.testing.assert_close(s.omega, torch.tensor([1.25]))
    si_consolidate(s, theta)
    torch.testing.assert_close(s.importance, torch.tensor([1.25 / (0.75 ** 2 + 0.1)]))
    assert float(si_penalty(theta, s)) == 0.0
    torch.testing.assert_close(si_penalty(theta + 1, s), s.importance.sum())


def test_si_strategy_importance_nonnegative():
    X, y = blobs()
    clf = run_tasks(tiny_learner("si"), X, y, [[0, 1], [2, 3]])
    assert torch.all(clf.strategy_.state.importance >= 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6), st.floats(0.0, 5.0))
def test_penalties_nonnegative_and_zero_at_anchor(values, lam):
    v = torch.tensor(values, dtype=torch.float64)
    star, theta = v[:3], v[3:]
    fisher = theta.abs()
    assert float(ewc_penalty(star, EWCState(lam, [(star, fisher)]))) == 0.0
    assert float(ewc_penalty(theta, EWCState(lam, [(star, fisher)]))) >= 0.0
    s = OnlineEWCState(lam=lam)
    ewc_online_consolidate(s, fisher, star)
    assert float(ewc_online_penalty(star, s)) == 0.0 and float(ewc_online_penalty(theta, s)) >= 0.0
    si = SIState(c=lam, importance=fisher, anchor=star)
    assert float(si_penalty(star, si)) == 0.0 and float(si_penalty(theta, si)) >= 0.0


# -- distillation --------------------------------------------------------------

def test_distill_targets():
    lin = torch.nn.Linear(1, 3, bias=True)
    with torch.no_grad():
        lin.weight.zero_()
        lin.bias.copy_(torch.tensor([1.0, 2.0, 3.0]))
    x = torch.ones(1, 1)
    teacher = TeacherSnapshot(lin, temperature=2.0)
    e = [math.exp(v / 2) for v in (1, 2, 3)]
    torch.testing.assert_close(distill_targets(teacher, x, [0, 1, 2])[0], torch.tensor([v / sum(e) for v in e]))
    torch.testing.assert_close(distill_targets(teacher, x, [0, 1, 2], temperature=1.0),
                               torch.softmax(lin(x), 1).detach())
    flat = distill_targets(teacher, x, [0, 1, 2], temperature=1e6)[0]
    torch.testing.assert_close(flat, torch.full((3,), 1 / 3), atol=1e-5, rtol=0)


def test_teacher_is_frozen():
    lin = torch.nn.Linear(2, 2)
    teacher = TeacherSnapshot(lin)
    with torch.no_grad():
        lin.weight.add_(1.0)
    assert not torch.equal(teacher.model.weight, lin.weight)
    assert not any(p.requires_grad for p in teacher.model.parameters())
    with pytest.raises(ConfigurationError):
        TeacherSnapshot(lin, temperature=0)


def test_lwf_examples():
    new = torch.tensor([[1.0, 2.0]])
    labels = torch.tensor([1])
    old = torch.tensor([[0.5, -0.5]])
    T = 2.0
    q_same = torch.softmax(old / T, 1)
    ce = math.log(1 + math.exp(-1.0))
    assert math.isclose(float(lwf_loss(new, labels, old, q_same, LwFConfig(1.0, T))), ce, rel_tol=1e-6)
    q = torch.tensor([[0.2, 0.8]])
    assert math.isclose(float(lwf_loss(new, labels, old, q, LwFConfig(0.0, T))), ce, rel_tol=1e-6)
    p = torch.softmax(old / T, 1)[0]
    kl = sum(float(q[0, i] * math.log(q[0, i] / p[i])) for i in range(2))
    got = float(lwf_loss(new, labels, old, q, LwFConfig(0.7, T)))
    assert math.isclose(got, ce + 0.7 * T ** 2 * kl, rel_tol=1e-5)
    with pytest.raises(ConfigurationError):
        LwFConfig(lambda_0=-1)


# -- generative replay ----------------------------------------------------------

def test_replay_ratio_examples():
    a = torch.tensor(0.37)
    assert mix_losses(a, None, 1) is a
    assert math.isclose(float(mix_losses(a, a, 2)), 0.37, rel_tol=1e-6)
    assert math.isclose(float(mix_losses(torch.tensor(0.9), torch.tensor(0.3), 3)), 0.5, rel_tol=1e-6)
    with pytest.raises(ConfigurationError):
        replay_ratio(0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10_000))
def test_replay_weights_sum_to_one(k):
    r = replay_ratio(k)
    assert math.isclose(r + (1 - r), 1.0) and 0 < r <= 1


def test_gr_task_loss_first_task_is_current_only():
    torch.manual_seed(0)
    lin = torch.nn.Linear(3, 4)
    x, y = torch.randn(5, 3), torch.tensor([0, 1, 0, 1, 1])
    allowed = torch.tensor([True, True, False, False])
    cur = torch.nn.functional.cross_entropy(lin(x)[:, :2], y)
    torch.testing.assert_close(gr_task_loss(lin, (x, y, allowed), None, 1), cur)
    with pytest.raises(ConfigurationError):
        gr_task_loss(lin, (x, y, allowed), None, 0)


def test_gr_task_loss_mixes_hard_and_soft_replay():
    torch.manual_seed(0)
    lin = torch.nn.Linear(3, 4)
    teacher = TeacherSnapshot(torch.nn.Linear(3, 4))
    x, y = torch.randn(5, 3), torch.tensor([2, 3, 2, 3, 2])
    allowed = torch.tensor([True] * 4)
    xr = torch.randn(6, 3)
    hard = label_replay(teacher, xr, [(0, 1)], HARD_LABELS)
    cur = torch.nn.functional.cross_entropy(lin(x), y)
    rep = torch.nn.functional.cross_entropy(lin(xr)[:, :2], teacher.logits(xr)[:, :2].argmax(1))
    torch.testing.assert_close(gr_task_loss(lin, (x, y, allowed), hard, 2), 0.5 * cur + 0.5 * rep)
    soft = label_replay(teacher, xr, [(0, 1)], DISTILL)
    assert soft.soft and torch.allclose(soft.targets[0].sum(1), torch.ones(6))
    with pytest.raises(ConfigurationError):
        gr_task_loss(lin, (x, y, allowed), soft, 2, mode=HARD_LABELS)
    gr_task_loss(lin, (x, y, allowed), soft, 2, mode=DISTILL).backward()


def merged_model(k=0, prior="standard_normal", units=4):
    torch.manual_seed(0)
    mlp = MLPConfig(input_dim=5, n_output_units=units, hidden_widths=[6, 4], dropout_rate=0.0, use_batch_norm=False)
    return MergedGenerativeClassifier(mlp, MergedConfig(latent_dim=3, prior=prior, internal_replay_layer=k))


def test_rtf_gen_weight_zero_is_classifier_only():
    mm = merged_model()
    x, y = torch.randn(6, 5), torch.tensor([0, 1, 1, 0, 1, 0])
    loss = rtf_loss(mm, (x, y), None, [0, 1], gen_weight=0.0, generator=torch.Generator().manual_seed(0))
    torch.testing.assert_close(loss, torch.nn.functional.cross_entropy(mm(x)[:, :2], y))


def test_rtf_components_match_independent_computation():
    mm = merged_model()
    x, y = torch.randn(6, 5), torch.tensor([0, 1, 1, 0, 1, 0])
    loss = rtf_loss(mm, (x, y), None, [0, 1], generator=torch.Generator().manual_seed(4))
    feat = mm.classifier.features(x)
    ce = torch.nn.functional.cross_entropy(mm.classifier.head(feat)[:, :2], y)
    mu, lv = mm.to_mu(feat), mm.to_logvar(feat).clamp(-10, 10)
    eps = torch.randn(mu.shape, generator=torch.Generator().manual_seed(4))
    recon = mm.decode(mu + (0.5 * lv).exp() * eps)
    rec = ((recon - x) ** 2).sum(1).mean()
    kl = gaussian_kl(mu, lv).mean()
    torch.testing.assert_close(loss, ce + (rec + kl) / 5)


def test_rtf_replay_terms_only_after_first_task():
    mm = merged_model()
    x, y = torch.randn(4, 5), torch.tensor([2, 3, 2, 3])
    cfg = BIRConfig(conditional=False, gating=False, internal_replay_layer=0)
    rb = merged_replay(mm, 4, [], [(0, 1)], cfg, torch.Generator().manual_seed(0))
    g = lambda: torch.Generator().manual_seed(1)
    first = rtf_loss(mm, (x, y), None, [0, 1, 2, 3], tasks_seen=1, generator=g())
    ignored = rtf_loss(mm, (x, y), rb, [0, 1, 2, 3], tasks_seen=1, generator=g())
    torch.testing.assert_close(first, ignored)
    second = rtf_loss(mm, (x, y), rb, [0, 1, 2, 3], tasks_seen=2, generator=g())
    assert not torch.allclose(first, second)


def test_bir_without_addons_equals_rtf():
    mm = merged_model()
    x, y = torch.randn(6, 5), torch.tensor([0, 1, 1, 0, 1, 0])
    cfg = BIRConfig(conditional=False, gating=False, internal_replay_layer=0, freeze_bottom=False)
    a = bir_step(mm, (x, y), [0, 1], cfg, generator=torch.Generator().manual_seed(2))
    b = rtf_loss(mm, (x, y), None, [0, 1], generator=torch.Generator().manual_seed(2))
    torch.testing.assert_close(a, b)


def test_bir_conditional_draws_from_class_mode():
    mm = merged_model(prior=GAUSSIAN_MIXTURE)
    with torch.no_grad():
        mm.prior.mode_means.copy_(torch.arange(12.0).view(4, 3) * 10)
    mm.prior.known_classes = {0, 1, 2, 3}
    z, ids = mm.prior.sample(500, class_id=2, generator=torch.Generator().manual_seed(0))
    assert torch.all(ids == 2)
    dists = torch.cdist(z, mm.prior.mode_means.detach())
    assert torch.all(dists.argmin(1) == 2)
    cfg = BIRConfig(conditional=True, gating=False, internal_replay_layer=0)
    rb = merged_replay(mm, 50, [1], [(0, 1)], cfg, torch.Generator().manual_seed(0))
    assert torch.all(rb.classes == 1)


def test_bir_missing_gating_mask():
    mm = merged_model(prior=GAUSSIAN_MIXTURE)
    mm.prior.known_classes = {0, 1}
    cfg = BIRConfig(conditional=True, gating=True, internal_replay_layer=0)
    with pytest.raises(ConfigurationError, match="gating mask"):
        bir_step(mm, (torch.randn(2, 5), torch.tensor([0, 1])), [0, 1], cfg)


def test_bir_input_layer_reconstruction_is_input_space():
    from malcl.model import merged_forward, merged_generative_loss
    for k, dim in ((0, 5), (1, 6)):
        mm = merged_model(k=k)
        x = torch.randn(3, 5)
        _, recon, stats, target = merged_forward(mm, x, [0, 1], generator=torch.Generator().manual_seed(0))
        assert recon.shape[1] == dim
        if k == 0:
            assert torch.equal(target, x)
            rec, _ = merged_generative_loss(mm, recon, stats, target)
            torch.testing.assert_close(rec, ((recon - x) ** 2).sum(1).mean())


def test_bir_config_validation():
    with pytest.raises(ConfigurationError):
        BIRConfig(conditional=False, gating=True)
    with pytest.raises(ConfigurationError):
        BIRConfig(gate_fraction=1.5)


@pytest.mark.parametrize("name", ["gr", "gr_distill", "rtf", "bir"])
def test_generative_strategies_run_end_to_end(name):
    X, y = blobs(per_class=20)
    params = {"latent_dim": 4, "replay_size": 8}
    clf = run_tasks(tiny_learner(name, params=params, epochs=1), X, y, [[0, 1], [2, 3]])
    assert clf.ledger_[1]["n_replayed"] > 0 and clf.ledger_[0]["n_replayed"] == 0
    assert clf.predict(X).shape == (80,)


def test_bir_freezes_bottom_after_first_task():
    X, y = blobs(per_class=20)
    clf = run_tasks(tiny_learner("bir", params={"latent_dim": 4}, epochs=1), X, y, [[0, 1]])
    mm = clf.model_
    before = [p.detach().clone() for p in mm.bottom_parameters()]
    run_tasks(clf, X, y, [[2, 3]])
    assert all(torch.equal(a, b) for a, b in zip(before, mm.bottom_parameters()))
    assert set(mm.gating_masks) == {0, 1, 2, 3}


# -- ER and A-GEM ----------------------------------------------------------------

def test_er_empty_buffer_is_current_loss():
    torch.manual_seed(0)
    lin = torch.nn.Linear(3, 4)
    ctx = context()
    x, y, t = torch.randn(5, 3), torch.tensor([0, 1, 2, 3, 0]), torch.zeros(5, dtype=torch.long)
    torch.testing.assert_close(er_step(lin, (x, y, t), ReplayBuffer(10), ctx),
                               torch.nn.functional.cross_entropy(lin(x), y))


def test_er_equal_weight_mix():
    torch.manual_seed(0)
    lin = torch.nn.Linear(3, 4)
    ctx = context()
    buf = ReplayBuffer(4, np.random.default_rng(0))
    xb = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
    er_update_buffer(buf, (xb, np.array([0, 1, 2, 3]), np.zeros(4)))
    x, y, t = torch.randn(5, 3), torch.tensor([0, 1, 2, 3, 0]), torch.zeros(5, dtype=torch.long)
    cur = torch.nn.functional.cross_entropy(lin(x), y)
    rep = torch.nn.functional.cross_entropy(lin(torch.from_numpy(xb)), torch.tensor([0, 1, 2, 3]))
    torch.testing.assert_close(er_step(lin, (x, y, t), buf, ctx, replay_size=4), 0.5 * (cur + rep))


def test_reservoir_fill_count():
    buf = ReplayBuffer(5, np.random.default_rng(0))
    buf.add(np.zeros((100, 2)), np.arange(100), 0, ids=np.arange(100))
    assert len(buf) == 5 and buf.n_seen == 100
    assert len(set(buf.stored_ids().tolist())) == 5


def test_replay_draw_deterministic():
    buf = ReplayBuffer(20, np.random.default_rng(0))
    buf.add(np.arange(60.0).reshape(30, 2), np.arange(30) % 3, 0)
    a = buf.sample(8, np.random.default_rng(5))
    b = buf.sample(8, np.random.default_rng(5))
    assert all(torch.equal(u, v) for u, v in zip(a, b))
    assert buf.sample(100)[0].shape[0] == 20


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 12), st.lists(st.integers(0, 9), max_size=15), st.integers(0, 2**31))
def test_buffer_capacity_never_exceeded(capacity, sizes, seed):
    buf = ReplayBuffer(capacity, np.random.default_rng(seed))
    total = 0
    for n in sizes:
        buf.add(np.ones((n, 3)), np.zeros(n, dtype=int), 0)
        total += n
        assert len(buf) <= capacity
        assert len(buf) == min(capacity, total)
        assert len(buf.sample(n + 1)[1]) <= len(buf)


def test_agem_examples():
    g_ref = torch.tensor([1.0, 2.0, -1.0], dtype=torch.float64)
    g = torch.tensor([0.5, 0.5, 0.1], dtype=torch.float64)
    assert agem_project(g, g_ref) is g
    assert torch.all(agem_project(-g_ref, g_ref) == 0)
    assert agem_project(-g, torch.zeros(3, dtype=torch.float64)) is not None
    torch.testing.assert_close(agem_project(-g, torch.zeros(3, dtype=torch.float64)), -g)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=10, max_size=10))
def test_agem_projection_identity(values):
    v = torch.tensor(values, dtype=torch.float64)
    g, g_ref = v[:5], v[5:]
    out = agem_project(g, g_ref)
    assert float(out @ g_ref) >= -1e-10 * max(1.0, float(g.norm() * g_ref.norm()))
    if float(g @ g_ref) >= 0:
        assert torch.equal(out, g)
    else:
        assert float(out @ g) >= -1e-10 * max(1.0, float(g.norm() ** 2))


def test_agem_strategy_projects():
    X, y = blobs()
    clf = run_tasks(tiny_learner("agem", params={"capacity": 40, "reference_size": 16}), X, y,
                    [[0, 1], [2, 3]])
    assert len(clf.strategy_.buffer) == 40
    assert clf.ledger_[1]["n_replayed"] > 0


def test_er_strategy_buffer_holds_all_tasks():
    X, y = blobs()
    clf = run_tasks(tiny_learner("er", params={"capacity": 50}), X, y, [[0], [1], [2], [3]])
    buf = clf.strategy_.buffer
    assert len(buf) == 50
    assert set(buf.sample(50)[1].tolist()) == {0, 1, 2, 3}


# -- iCaRL -------------------------------------------------------------------------

class IdentityFeatures(torch.nn.Module):
    def __init__(self, n_units=2):
        super().__init__()
        self.n_units = n_units

    def features(self, x):
        return x

    def forward(self, x):
        return x


def test_herding_whole_set_when_budget_large():
    f = np.random.default_rng(0).normal(size=(5, 3))
    order = herding_order(f, 10)
    assert sorted(order) == list(range(5))


def test_herding_line_picks_mean_point_first():
    f = np.array([[0.0], [1.0], [2.0]])
    first = min(range(3), key=lambda i: abs(f[i, 0] - f.mean()))
    assert herding_order(f, 1) == [first] == [1]


@pytest.mark.parametrize("n", [3, 5, 7])
def test_herding_matches_exhaustive_oracle(n):
    f = np.random.default_rng(n).normal(size=(n, 2))
    assert herding_order(f, n) == exhaustive_herding(f)


def test_exemplar_construction_errors_and_prefix():
    model = IdentityFeatures()
    with pytest.raises(ConfigurationError):
        icarl_construct_exemplars(model, torch.randn(4, 2), 0)
    with pytest.raises(ValueError):
        icarl_construct_exemplars(model, torch.zeros(0, 2), 3)
    ex = icarl_construct_exemplars(model, torch.randn(10, 2), 4)
    assert len(ex) == 4
    sets = {0: ex}
    assert torch.equal(icarl_reduce_exemplars(sets, 4)[0], ex)
    assert torch.equal(icarl_reduce_exemplars(sets, 2)[0], ex[:2])


def test_nearest_mean_separation_oracle():
    r = torch.Generator().manual_seed(0)
    a = torch.randn(50, 2, generator=r) + 5
    b = torch.randn(50, 2, generator=r) - 5
    model = IdentityFeatures()
    sets = {0: icarl_construct_exemplars(model, a, 10), 1: icarl_construct_exemplars(model, b, 10)}
    test = torch.cat([torch.randn(20, 2, generator=r) * 0.5 + 5, torch.randn(20, 2, generator=r) * 0.5 - 5])
    truth = torch.cat([torch.zeros(20), torch.ones(20)]).long()
    assert torch.equal(icarl_classify(model, test, sets), truth)
    with pytest.raises(ValueError):
        icarl_classify(model, test, {0: sets[0], 1: torch.zeros(0, 2)})


def test_icarl_distillation_vanishes_for_own_teacher():
    torch.manual_seed(0)
    lin = torch.nn.Linear(3, 4)
    x, y = torch.randn(6, 3), torch.tensor([2, 3, 2, 3, 2, 3])
    with_teacher = icarl_loss(lin, (x, y), TeacherSnapshot(lin), [0, 1, 2, 3], [0, 1])
    plain = icarl_loss(lin, (x, y), None, [0, 1, 2, 3], [0, 1])
    torch.testing.assert_close(with_teacher, plain, atol=1e-6, rtol=0)


def test_icarl_budgets_follow_classes_seen():
    X, y = blobs(n_classes=6, per_class=30)
    clf = tiny_learner("icarl", params={"capacity": 20})
    for k, task in enumerate([[0, 1], [2, 3], [4, 5]], start=1):
        run_tasks(clf, X, y, [task])
        s = clf.strategy_
        budget = 20 // (2 * k)
        assert s.per_class_budget(2 * k) == budget
        assert sorted(s.exemplar_sets) == list(range(2 * k))
        assert all(len(e) == budget for e in s.exemplar_sets.values())
        assert s.memory_size() <= 20


# -- PJR --------------------------------------------------------------------------

def store_with(n, tasks=4):
    store = PJRStore()
    per = n // tasks
    for k in range(tasks):
        store.add_task(np.arange(k * per, (k + 1) * per, dtype=np.float32)[:, None], np.zeros(per, int), k)
    return store


def test_pjr_sample_examples():
    store = store_with(1000)
    rng = np.random.default_rng(0)
    assert len(pjr_sample(store, 0.0, rng)) == 0
    full = pjr_sample(store, 1.0, rng)
    assert sorted(full.x[:, 0].tolist()) == list(range(1000))
    part = pjr_sample(store, 0.2, rng)
    assert len(part) == 200 and len(set(part.x[:, 0].tolist())) == 200
    with pytest.raises(ConfigurationError):
        pjr_sample(store, -0.1, rng)


def test_pjr_full_fraction_equals_joint_multiset():
    X, y = blobs(per_class=15)
    pools, extras = {}, {}
    for name, params in (("joint", None), ("pjr", {"fraction": 1.0})):
        clf = run_tasks(tiny_learner(name, params=params, epochs=0), X, y, [[0], [1], [2], [3]])
        extra = clf.strategy_.replay(context(task_id=4))
        rows = np.column_stack([extra.x, extra.y, extra.task_ids])
        pools[name] = sorted(map(tuple, rows.tolist()))
        extras[name] = [e["n_extra"] for e in clf.ledger_]
    assert pools["joint"] == pools["pjr"]
    assert extras["joint"] == extras["pjr"] == [0, 15, 30, 45]


def test_pjr_redraws_each_task():
    store = store_with(100)
    a = pjr_sample(store, 0.3, np.random.default_rng(1))
    b = pjr_sample(store, 0.3, np.random.default_rng(2))
    assert len(a) == len(b) == 30 and not np.array_equal(a.x, b.x)
