import json
import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from trajkin.losses import (
    LossConfig,
    LossReport,
    append_report,
    cons1_loss,
    cons2_loss,
    diff_tolerance,
    position_loss,
    read_loss_log,
    total_loss,
    va_loss,
)


def cfg(**kw):
    return LossConfig(**kw)


class TestDiffTolerance:
    def test_inside_interval(self):
        assert diff_tolerance(1.05, 1.0, 0.1).item() == 0.0

    def test_above(self):
        assert diff_tolerance(1.3, 1.0, 0.1).item() == pytest.approx(0.2)

    def test_below(self):
        assert diff_tolerance(0.7, 1.0, 0.1).item() == pytest.approx(0.2)

    def test_negative_epsilon(self):
        with pytest.raises(ValueError):
            diff_tolerance(1.0, 1.0, -0.01)

    def test_zero_epsilon_is_abs_error(self):
        pred = torch.linspace(-2, 2, 41, dtype=torch.float64)
        out = diff_tolerance(pred, torch.zeros_like(pred), 0.0)
        assert torch.equal(out, pred.abs())

    def test_zero_exactly_on_closed_interval(self):
        gt, eps = 0.5, 0.2
        for pred in (gt - eps, gt - 0.1, gt, gt + 0.1, gt + eps):
            assert diff_tolerance(pred, gt, eps).item() == 0.0

    def test_value_continuous_at_edges(self):
        gt, eps, h = 1.0, 0.3, 1e-9
        assert diff_tolerance(gt + eps + h, gt, eps).item() == pytest.approx(0.0, abs=2e-9)
        assert diff_tolerance(gt - eps - h, gt, eps).item() == pytest.approx(0.0, abs=2e-9)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 3))
    def test_nonnegative(self, pred, gt, eps):
        assert diff_tolerance(pred, gt, eps).item() >= 0.0

    def test_interior_subgradient_at_edges(self):
        gt, eps = 1.0, 0.3
        for edge in (gt + eps, gt - eps):
            pred = torch.tensor(edge, dtype=torch.float64, requires_grad=True)
            diff_tolerance(pred, torch.tensor(gt, dtype=torch.float64), eps).backward()
            assert pred.grad.item() == 0.0


class TestPositionLoss:
    def test_perfect_predictions(self):
        gt = torch.randn(6, 12, 2, dtype=torch.float64)
        preds = gt.unsqueeze(1).repeat(1, 5, 1, 1)
        assert position_loss(preds, gt, cfg(epsilon=0.1)).item() == 0.0

    def test_single_candidate_no_variance(self):
        gt = torch.zeros(1, 4, 2, dtype=torch.float64)
        preds = torch.full((1, 1, 4, 2), 0.5, dtype=torch.float64)
        c = cfg(epsilon=0.1)
        expected = c.alpha * (0.5 - 0.1)  # tolerance error only
        assert position_loss(preds, gt, c).item() == pytest.approx(expected)

    def test_two_candidate_hand_computation(self):
        # candidates pinned at gt +/- 2*eps: tolerance errors eps each
        # (sum 2*eps), spread variance (2*eps)^2
        eps = 0.1
        gt = torch.zeros(1, 3, 2, dtype=torch.float64)
        preds = torch.stack([gt[0] + 2 * eps, gt[0] - 2 * eps]).unsqueeze(0)
        c = cfg(epsilon=eps)
        expected = c.alpha * 2 * eps + c.beta * 4 * eps * eps
        assert expected == pytest.approx(0.072)
        assert position_loss(preds, gt, c).item() == pytest.approx(expected)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            position_loss(torch.zeros(2, 3, 4, 2), torch.zeros(2, 5, 2), cfg())

    def test_mse_mode_best_of_k(self):
        gt = torch.zeros(1, 2, 2, dtype=torch.float64)
        good = gt[0] + 0.1
        bad = gt[0] + 10.0
        preds = torch.stack([bad, good]).unsqueeze(0)
        out = position_loss(preds, gt, cfg(pos_mode="mse"))
        assert out.item() == pytest.approx(0.01)


class TestVaLoss:
    def test_zero_at_target(self):
        v = torch.randn(4, 12, 2)
        a = torch.randn(4, 12, 2)
        assert va_loss(v, v, a, a, cfg()).item() == 0.0

    def test_quadratic_branch(self):
        # residual 0.5 in every element, delta 1 -> 0.5 * r^2 per element, twice (both streams)
        z = torch.zeros(1, 3, 2)
        r = torch.full((1, 3, 2), 0.5)
        assert va_loss(r, z, r, z, cfg()).item() == pytest.approx(2 * 0.125)

    def test_linear_branch(self):
        z = torch.zeros(1, 3, 2)
        r = torch.full((1, 3, 2), 3.0)
        assert va_loss(r, z, z, z, cfg()).item() == pytest.approx(2.5)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            va_loss(torch.zeros(1, 3, 2), torch.zeros(1, 4, 2), torch.zeros(1, 3, 2), torch.zeros(1, 3, 2), cfg())


class TestCons1:
    def test_self_consistent_candidates(self):
        torch.manual_seed(0)
        vels = torch.randn(3, 4, 6, 2, dtype=torch.float64)
        last = torch.randn(3, 2, dtype=torch.float64)
        from trajkin.kinematics import pseudo_accel

        accs = pseudo_accel(vels, last[:, None, :])
        assert cons1_loss(vels, accs, last).item() == 0.0

    def test_steady_state_zero(self):
        last = torch.tensor([[0.7, -0.3]])
        vels = last.unsqueeze(1).unsqueeze(1).repeat(1, 3, 5, 1)
        accs = torch.zeros_like(vels)
        assert cons1_loss(vels, accs, last).item() == 0.0

    def test_single_step_mse_convention(self):
        # implied accel (1, 0) vs predicted (0, 0): mean over both components
        vels = torch.tensor([[[[2.0, 0.0]]]])
        accs = torch.tensor([[[[0.0, 0.0]]]])
        last = torch.tensor([[1.0, 0.0]])
        assert cons1_loss(vels, accs, last).item() == pytest.approx(0.5)

    def test_k_mismatch(self):
        with pytest.raises(ValueError):
            cons1_loss(torch.zeros(2, 3, 4, 2), torch.zeros(2, 5, 4, 2), torch.zeros(2, 2))


class TestCons2:
    def test_single_candidate_zero(self):
        pseudo = torch.randn(2, 1, 5, 2, dtype=torch.float64)
        sel = torch.randn(2, 5, 2, dtype=torch.float64)
        assert cons2_loss(pseudo, pseudo, sel, sel).item() == pytest.approx(0.0, abs=1e-12)

    def test_dominant_candidate_frozen_value(self):
        # one candidate at distance 0, two at distance 10 (both streams):
        # cross-entropy is -log(1 / (1 + 2 e^-10)) = 9.0796e-5, frozen from
        # an independent softmax evaluation
        sel = torch.zeros(1, 1, 2, dtype=torch.float64)
        cands = torch.zeros(1, 3, 1, 2, dtype=torch.float64)
        cands[0, 1, 0, 0] = 10.0
        cands[0, 2, 0, 1] = 10.0
        expected = -math.log(1.0 / (1.0 + 2.0 * math.exp(-10.0)))
        assert expected == pytest.approx(9.0796e-5, rel=1e-4)
        assert cons2_loss(cands, cands, sel[0:1], sel[0:1]).item() == pytest.approx(expected, rel=1e-9)

    def test_uniform_distances_log_k(self):
        k = 7
        sel = torch.zeros(1, 2, 2, dtype=torch.float64)
        # all candidates equidistant from sel
        cands = torch.zeros(1, k, 2, 2, dtype=torch.float64)
        for i in range(k):
            angle = 2 * math.pi * i / k
            cands[0, i, :, 0] = 3.0 * math.cos(angle)
            cands[0, i, :, 1] = 3.0 * math.sin(angle)
        assert cons2_loss(cands, cands, sel, sel).item() == pytest.approx(math.log(k), rel=1e-9)

    def test_strictly_decreasing_in_target_distance(self):
        sel = torch.zeros(1, 1, 2, dtype=torch.float64)
        losses = []
        for d in (4.0, 3.0, 2.0, 1.0, 0.5):
            cands = torch.tensor([[[[d, 0.0]], [[10.0, 0.0]], [[0.0, 12.0]]]], dtype=torch.float64)
            losses.append(cons2_loss(cands, cands, sel, sel).item())
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            cons2_loss(torch.zeros(1, 0, 3, 2), torch.zeros(1, 0, 3, 2), torch.zeros(1, 3, 2), torch.zeros(1, 3, 2))


class TestTotalLoss:
    def test_weighted_sum(self):
        report = total_loss(1.0, 1.0, 1.0, 1.0, cfg(lam=0.5))
        assert report.total == pytest.approx(3.5)

    def test_only_position(self):
        c = cfg(enable_va=False, enable_cons1=False, enable_cons2=False)
        report = total_loss(2.0, 5.0, 7.0, 9.0, c)
        assert report.total == 2.0
        assert report.va == report.cons1 == report.cons2 == 0.0

    def test_all_zero(self):
        assert total_loss(0.0, 0.0, 0.0, 0.0, cfg()).total == 0.0

    def test_linear_in_lambda(self):
        parts = (1.3, 0.7, 0.2, 2.0)
        t1 = total_loss(*parts, cfg(lam=1.0)).total
        t2 = total_loss(*parts, cfg(lam=2.0)).total
        t3 = total_loss(*parts, cfg(lam=3.0)).total
        assert t3 - t2 == pytest.approx(t2 - t1)

    def test_tensor_passthrough_keeps_graph(self):
        x = torch.tensor(2.0, requires_grad=True)
        report = total_loss(x, x * 0, x * 0, x * 0, cfg())
        report.total.backward()
        assert x.grad is not None


class TestConfigValidation:
    def test_all_disabled_rejected(self):
        with pytest.raises(ValueError):
            cfg(enable_pos=False, enable_va=False, enable_cons1=False, enable_cons2=False)

    def test_negative_epsilon(self):
        with pytest.raises(ValueError):
            cfg(epsilon=-0.1)

    def test_bad_pos_mode(self):
        with pytest.raises(ValueError):
            cfg(pos_mode="huber")


def test_loss_log_round_trip(tmp_path):
    path = tmp_path / "log.jsonl"
    reports = [LossReport(pos=1.0, va=0.5, cons1=0.25, cons2=2.0, total=2.75)]
    with open(path, "w") as fh:
        for i, r in enumerate(reports):
            append_report(fh, i, r)
    rows = read_loss_log(path)
    assert rows == [{"step": 0, "pos": 1.0, "va": 0.5, "cons1": 0.25, "cons2": 2.0, "total": 2.75}]
    # every record is valid standalone JSON
    with open(path) as fh:
        for line in fh:
            json.loads(line)


def test_every_loss_nonnegative_on_random_inputs():
    torch.manual_seed(9)
    c = cfg()
    for _ in range(25):
        preds = torch.randn(3, 4, 5, 2) * 3
        gt = torch.randn(3, 5, 2) * 3
        assert position_loss(preds, gt, c).item() >= 0.0
        assert position_loss(preds, gt, cfg(pos_mode="mse")).item() >= 0.0
        assert va_loss(preds[:, 0], gt, preds[:, 1], gt, c).item() >= 0.0
        assert cons1_loss(preds, torch.randn_like(preds), torch.randn(3, 2)).item() >= 0.0
        assert cons2_loss(preds, preds, gt, gt).item() >= 0.0


def test_gradients_flow_through_every_term():
    torch.manual_seed(3)
    c = cfg(epsilon=0.05)
    preds = torch.randn(2, 3, 4, 2, dtype=torch.float64, requires_grad=True)
    gt = torch.randn(2, 4, 2, dtype=torch.float64)
    position_loss(preds, gt, c).backward()
    assert preds.grad is not None and torch.isfinite(preds.grad).all()

    vels = torch.randn(2, 3, 4, 2, dtype=torch.float64, requires_grad=True)
    accs = torch.randn(2, 3, 4, 2, dtype=torch.float64, requires_grad=True)
    cons1_loss(vels, accs, torch.randn(2, 2, dtype=torch.float64)).backward()
    assert torch.isfinite(vels.grad).all() and torch.isfinite(accs.grad).all()

    pv = torch.randn(2, 3, 4, 2, dtype=torch.float64, requires_grad=True)
    pa = torch.randn(2, 3, 4, 2, dtype=torch.float64, requires_grad=True)
    cons2_loss(pv, pa, torch.randn(2, 4, 2, dtype=torch.float64), torch.randn(2, 4, 2, dtype=torch.float64)).backward()
    assert torch.isfinite(pv.grad).all() and torch.isfinite(pa.grad).all()
