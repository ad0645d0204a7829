"""Network builders, parameter sets, gradient checks and checkpoints."""

import numpy as np
import pytest
import torch

from fluid_agents.envs.lbf import observation_size as lbf_obs_size
from fluid_agents.envs.predator_prey import observation_size as predprey_obs_size
from fluid_agents.errors import ConfigError, NonFiniteLossError, ShapeMismatchError
from fluid_agents.nn import (
    CHECKPOINT_FORMAT_VERSION,
    DuelingHead,
    NetworkSpec,
    ParameterSet,
    build_network,
    finite_difference_check,
    lbf_actor_critic_spec,
    lbf_central_critic_spec,
    lbf_policy_spec,
    lbf_q_spec,
    linear_decay,
    load_checkpoint,
    predprey_actor_critic_spec,
    predprey_central_critic_spec,
    predprey_policy_spec,
    predprey_q_spec,
    puddle_q_spec,
    save_checkpoint,
)

PP_OBS = predprey_obs_size(5, 4)
PP_GRID = (3, 5, 5)
LBF_OBS = lbf_obs_size(2, 3)

ALL_SPECS = [
    predprey_q_spec(PP_OBS, PP_GRID, 6),
    predprey_actor_critic_spec(PP_OBS, PP_GRID, 6),
    predprey_policy_spec(PP_OBS, PP_GRID, 6),
    predprey_central_critic_spec(12 * 25 + 40, (12, 5, 5), "predprey_concat_critic"),
    lbf_q_spec(LBF_OBS, 7),
    lbf_actor_critic_spec(LBF_OBS, 7),
    lbf_policy_spec(LBF_OBS, 7),
    lbf_central_critic_spec(LBF_OBS - 1),
    puddle_q_spec(7 * 64 + 30, (7, 8, 8), 6),
]


def linear_q_spec(input_dim=4, n_actions=3):
    return NetworkSpec("linear_q", "q", input_dim, n_actions, hidden=())


class TestSpecs:
    def test_unknown_head(self):
        with pytest.raises(ConfigError):
            NetworkSpec("x", "softmax", 4, 2)

    def test_grid_larger_than_input(self):
        with pytest.raises(ShapeMismatchError):
            NetworkSpec("x", "q", 10, 2, grid_shape=(1, 4, 4))

    def test_grid_too_small_for_convs(self):
        with pytest.raises(ShapeMismatchError):
            build_network(NetworkSpec("x", "q", 27, 2, grid_shape=(3, 3, 3), conv_channels=(4, 4)))

    def test_dict_roundtrip(self):
        spec = ALL_SPECS[0]
        assert NetworkSpec.from_dict(spec.to_dict()) == spec

    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.name)
    def test_output_shapes(self, spec):
        network = build_network(spec).eval()
        out = network(torch.randn(5, spec.input_dim))
        if spec.head == "actor_critic":
            logits, value = out
            assert logits.shape == (5, spec.n_actions)
            assert value.shape == (5,)
        elif spec.head == "value":
            assert out.shape == (5,)
        else:
            assert out.shape == (5, spec.n_actions)

    def test_wrong_input_width(self):
        network = build_network(linear_q_spec())
        with pytest.raises(ShapeMismatchError):
            network(torch.zeros(2, 5))


class TestGradients:
    @pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.name)
    def test_autograd_matches_finite_differences(self, spec):
        torch.manual_seed(0)
        network = build_network(spec)
        inputs = np.random.default_rng(0).random((3, spec.input_dim))
        report = finite_difference_check(network, inputs, coords_per_tensor=3)
        assert report.checked > 0
        assert report.passed(1e-4), report.worst

    def test_linear_head_gradient_in_closed_form(self):
        params = ParameterSet(linear_q_spec(), lr_init=1e-3)
        x = torch.tensor([[1.0, 2.0, 3.0, 4.0], [0.5, 0.0, -1.0, 2.0]])
        grads = params.backward(params(x)[:, 1].sum())
        expected = torch.zeros(3, 4)
        expected[1] = x.sum(dim=0)
        assert torch.allclose(grads["head.weight"], expected)
        assert torch.allclose(grads["head.bias"], torch.tensor([0.0, 2.0, 0.0]))

    def test_unused_tensors_get_zero_gradients(self):
        params = ParameterSet(predprey_actor_critic_spec(PP_OBS, PP_GRID, 6))
        logits, _ = params(torch.zeros(2, PP_OBS))
        grads = params.backward(logits.sum())
        critic = [name for name in grads if name.startswith("critic")]
        assert critic
        assert all(not grads[name].any() for name in critic)

    def test_non_finite_loss_rejected(self):
        params = ParameterSet(linear_q_spec())
        with pytest.raises(NonFiniteLossError):
            params.backward(params(torch.zeros(1, 4)).sum() * float("nan"))


class TestZeroAndDueling:
    def test_zero_parameters_give_zero_output(self):
        network = build_network(lbf_q_spec(LBF_OBS, 7)).eval()
        with torch.no_grad():
            for p in network.parameters():
                p.zero_()
        assert not network(torch.randn(4, LBF_OBS)).any()

    def test_constant_advantage_reduces_to_value(self):
        head = DuelingHead(4, 3)
        with torch.no_grad():
            head.advantage.weight.zero_()
            head.advantage.bias.fill_(5.0)
        h = torch.randn(6, 4)
        q = head(h)
        assert torch.allclose(q, head.value(h).expand(6, 3))

    def test_dueling_advantages_have_zero_mean_offset(self):
        head = DuelingHead(4, 3)
        h = torch.randn(6, 4)
        q = head(h)
        assert torch.allclose(q.mean(dim=1), head.value(h).squeeze(-1), atol=1e-6)


class TestParameterSet:
    def test_clipping_to_unit_norm(self):
        params = ParameterSet(linear_q_spec(), max_grad_norm=1.0)
        grads = {name: torch.full_like(p, 10.0) for name, p in params.named_parameters().items()}
        norm = params.optimize_step(grads)
        assert norm == pytest.approx(10.0 * np.sqrt(15))
        clipped = torch.sqrt(sum((p.grad ** 2).sum() for p in params.named_parameters().values()))
        assert float(clipped) == pytest.approx(1.0, rel=1e-5)

    def test_zero_gradients_leave_parameters(self):
        params = ParameterSet(linear_q_spec())
        before = {name: p.detach().clone() for name, p in params.named_parameters().items()}
        params.optimize_step({name: torch.zeros_like(p) for name, p in params.named_parameters().items()})
        for name, p in params.named_parameters().items():
            assert torch.equal(p, before[name])
        assert params.step == 1

    def test_learning_rate_decays_linearly(self):
        params = ParameterSet(linear_q_spec(), lr_init=1e-3, lr_min=1e-4, total_updates=10)
        zeros = {name: torch.zeros_like(p) for name, p in params.named_parameters().items()}
        for _ in range(5):
            params.optimize_step(zeros)
        assert params.lr == pytest.approx(5.5e-4)
        for _ in range(10):
            params.optimize_step(zeros)
        assert params.lr == pytest.approx(1e-4)

    def test_schedule_factor(self):
        schedule = linear_decay(1e-3, 1e-4, 100)
        assert schedule(0) == 1.0
        assert schedule(100) == pytest.approx(0.1)
        assert schedule(500) == pytest.approx(0.1)
        assert linear_decay(1e-3, None, 100)(50) == 1.0

    def test_update_reduces_a_simple_loss(self):
        torch.manual_seed(1)
        params = ParameterSet(linear_q_spec(), lr_init=1e-2)
        x = torch.randn(8, 4)
        target = torch.zeros(8, 3)
        first = float(((params(x) - target) ** 2).mean())
        for _ in range(50):
            params.update(((params(x, training=True) - target) ** 2).mean())
        assert float(((params(x) - target) ** 2).mean()) < first

    def test_snapshot_is_frozen_copy(self):
        params = ParameterSet(linear_q_spec())
        frozen = params.snapshot()
        params.update(params(torch.ones(1, 4)).sum())
        assert not torch.equal(frozen.head.weight, params.network.head.weight)
        assert not any(p.requires_grad for p in frozen.parameters())


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        torch.manual_seed(2)
        params = ParameterSet(lbf_q_spec(LBF_OBS, 7), lr_init=5e-4, lr_min=1e-5, total_updates=100)
        params.update(params(torch.randn(4, LBF_OBS), training=True).sum())
        path = save_checkpoint(tmp_path / "ckpt" / "ckpt_0001.pt", {"shared": params}, step=1, meta={"env": "lbf"})

        archive = load_checkpoint(path)
        assert archive["format_version"] == CHECKPOINT_FORMAT_VERSION
        assert archive["meta"] == {"env": "lbf"}
        restored = ParameterSet(lbf_q_spec(LBF_OBS, 7), lr_init=5e-4, lr_min=1e-5, total_updates=100)
        restored.load_state_dict(archive["networks"]["shared"])
        x = torch.randn(3, LBF_OBS)
        assert torch.equal(restored(x), params(x))
        assert restored.step == 1
        assert restored.lr == pytest.approx(params.lr)

    def test_mismatched_network_rejected(self, tmp_path):
        params = ParameterSet(lbf_q_spec(LBF_OBS, 7))
        path = save_checkpoint(tmp_path / "a.pt", {"shared": params}, step=0)
        other = ParameterSet(lbf_q_spec(LBF_OBS + 6, 7))
        with pytest.raises(ShapeMismatchError):
            other.load_state_dict(load_checkpoint(path)["networks"]["shared"])

    def test_unknown_format_version(self, tmp_path):
        path = tmp_path / "old.pt"
        torch.save({"format_version": 99}, path)
        with pytest.raises(ConfigError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "missing.pt")
