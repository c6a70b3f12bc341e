"""Network construction, forward equivalence, EMA coupling, checkpoint i/o."""

import numpy as np
import pytest

from renlab import tensor as T
from renlab.exceptions import ConfigError, ContractError, ShapeError
from renlab.networks import (
    DISC_EPS,
    BoundNet,
    DualNet,
    NetSpec,
    alpha_theta_ramp,
    discriminate,
    ema_update,
    forward_fc,
    forward_fc_plain,
    init_params,
    load_paramsets,
    save_paramsets,
)


def test_netspec_validation():
    with pytest.raises(ConfigError):
        NetSpec((4,))
    with pytest.raises(ConfigError):
        NetSpec((4, 0))
    with pytest.raises(ConfigError):
        NetSpec((4, 2), final="tanh")


def test_init_params_xavier_bounds_and_determinism():
    spec = NetSpec((8, 16, 3))
    ps = init_params(spec, [5, 11])
    again = init_params(spec, [5, 11])
    other = init_params(spec, [6, 11])
    for i, (fan_in, fan_out) in enumerate([(8, 16), (16, 3)]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = ps.params[f"w{i}"]
        assert np.abs(w).max() <= bound
        assert np.array_equal(ps.params[f"b{i}"], np.zeros((1, fan_out)))
        assert np.array_equal(w, again.params[f"w{i}"])
        assert not np.array_equal(w, other.params[f"w{i}"])


def test_paramset_shape_check():
    spec = NetSpec((3, 2))
    good = init_params(spec, 0)
    bad = {k: v.copy() for k, v in good.items()}
    bad["w0"] = bad["w0"].T
    from renlab.networks import ParamSet

    with pytest.raises(ShapeError):
        ParamSet(spec, bad)


def test_bound_and_plain_forwards_agree(rng):
    spec = NetSpec((6, 5, 4), final="relu")
    ps = init_params(spec, 42)
    x = rng.normal(size=(7, 6))
    g = T.Graph()
    bound = BoundNet(g, ps, "F")
    out = bound(g.constant(x))
    assert np.allclose(out.values, ps.forward_plain(x), atol=1e-15)
    assert (out.values >= 0).all()


def test_forward_fc_matches_plain(rng):
    ps_F = init_params(NetSpec((5, 8, 3), final="relu"), 1)
    ps_C = init_params(NetSpec((3, 4)), 2)
    x = rng.normal(size=(6, 5))
    g = T.Graph()
    f, logits, p = forward_fc(BoundNet(g, ps_F, "F"), BoundNet(g, ps_C, "C"), g.constant(x))
    f2, logits2, p2 = forward_fc_plain(ps_F, ps_C, x)
    assert np.allclose(f.values, f2, atol=1e-15)
    assert np.allclose(logits.values, logits2, atol=1e-15)
    assert np.allclose(p.values, p2, atol=1e-15)
    assert np.allclose(p.values.sum(axis=1), 1.0, atol=1e-12)


def test_discriminate_output_clamped(rng):
    ps_D = init_params(NetSpec((4, 8, 1), final="sigmoid"), 3)
    # huge inputs push the raw sigmoid against 0/1; the clamp must hold
    x = rng.normal(scale=1e4, size=(9, 4))
    g = T.Graph()
    out = discriminate(BoundNet(g, ps_D, "D"), g.constant(x))
    assert (out.values >= DISC_EPS).all()
    assert (out.values <= 1.0 - DISC_EPS).all()


def test_discriminate_rejects_wrong_head():
    ps = init_params(NetSpec((4, 1)), 0)  # linear head, no sigmoid
    g = T.Graph()
    with pytest.raises(ContractError):
        discriminate(BoundNet(g, ps, "D"), g.constant(np.zeros((2, 4))))


def test_dualnet_starts_as_exact_copy_and_counts_double():
    ps_F = init_params(NetSpec((6, 5, 4)), 7)
    ps_C = init_params(NetSpec((4, 3)), 8)
    net = DualNet(ps_F, ps_C)
    single = ps_F.param_count() + ps_C.param_count()
    assert net.param_count() == 2 * single
    for t_ps, s_ps in ((net.teacher_F, ps_F), (net.teacher_C, ps_C)):
        for k, arr in t_ps.items():
            assert np.array_equal(arr, s_ps.params[k])
            assert arr is not s_ps.params[k]  # a copy, not a view


def test_alpha_theta_ramp_values():
    assert alpha_theta_ramp(0) == 0.0
    assert alpha_theta_ramp(1) == 0.5
    assert alpha_theta_ramp(99) == pytest.approx(0.99)
    assert alpha_theta_ramp(10_000) == 0.99
    with pytest.raises(ContractError):
        alpha_theta_ramp(-1)


def test_ema_update_alpha_zero_copies_student():
    net = DualNet(init_params(NetSpec((3, 2)), 1), init_params(NetSpec((2, 2)), 2), 0.0)
    net.student_F.params["w0"] += 1.0
    ema_update(net)
    assert np.array_equal(net.teacher_F.params["w0"], net.student_F.params["w0"])
    assert net.step_count == 1


def test_ema_update_alpha_one_freezes_teacher():
    net = DualNet(init_params(NetSpec((3, 2)), 1), init_params(NetSpec((2, 2)), 2), 1.0)
    frozen = net.teacher_F.params["w0"].copy()
    for _ in range(5):
        net.student_F.params["w0"] += 1.0
        ema_update(net)
    assert np.array_equal(net.teacher_F.params["w0"], frozen)


def test_ema_update_validates_alpha():
    net = DualNet(init_params(NetSpec((3, 2)), 1), init_params(NetSpec((2, 2)), 2), 1.5)
    with pytest.raises(ConfigError):
        ema_update(net)


def test_ema_geometric_law():
    # with the student frozen, ||teacher_n - student|| shrinks as alpha^n
    for alpha in (0.0, 0.5, 0.9, 0.99, 1.0):
        net = DualNet(init_params(NetSpec((4, 3)), 10), init_params(NetSpec((3, 2)), 11), alpha)
        rng = np.random.default_rng(12)
        for ps in (net.teacher_F, net.teacher_C):
            for k in ps.params:
                ps.params[k] = ps.params[k] + rng.normal(size=ps.params[k].shape)

        def gap(n):
            total = 0.0
            for t_ps, s_ps in ((net.teacher_F, net.student_F), (net.teacher_C, net.student_C)):
                for k, arr in t_ps.items():
                    total += float(((arr - s_ps.params[k]) ** 2).sum())
            return np.sqrt(total)

        initial = gap(net)
        for n in range(1, 21):
            ema_update(net)
            if alpha == 0.0:
                assert gap(net) == 0.0
            else:
                assert abs(gap(net) / initial - alpha**n) < 1e-10


def test_paramset_roundtrip(tmp_path, rng):
    ps_a = init_params(NetSpec((5, 4, 3), final="relu"), 21)
    ps_b = init_params(NetSpec((3, 6, 1), final="sigmoid"), 22)
    ps_a.params["w0"] += rng.normal(size=ps_a.params["w0"].shape)  # non-init values
    path = tmp_path / "ckpt.txt"
    save_paramsets(path, {"F": ps_a, "D": ps_b})
    back = load_paramsets(path)
    assert set(back) == {"F", "D"}
    assert back["F"].spec == ps_a.spec
    assert back["D"].spec.final == "sigmoid"
    for k, arr in ps_a.items():
        assert np.array_equal(back["F"].params[k], arr)  # repr round trip is exact


def test_load_paramsets_rejects_garbage(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ContractError):
        load_paramsets(path)
