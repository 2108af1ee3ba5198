import math

import numpy as np
import pytest
import torch

from oracles import charbonnier_loop
from usdemosaic import ops
from usdemosaic.data import synthetic_dataset
from usdemosaic.interp import wb_interpolate
from usdemosaic.network import ModelConfig, build_model, demosaic
from usdemosaic.sfa import IDENTITY, SFAPattern, TransformSpec, mosaic_sample
from usdemosaic.train import (
    LossConfig, TrainConfig, TrainingDiverged, charbonnier, cube_loss, fit, load_checkpoint, mosaic_loss,
    read_history, save_checkpoint, supervised_loss, train_step, usd_loss,
)

EPS = 1e-3


def test_charbonnier_floor_and_asymptote():
    assert charbonnier(torch.zeros(3, 4, dtype=torch.float64), EPS).item() == pytest.approx(EPS, rel=1e-12)
    x = torch.full((5,), 10.0, dtype=torch.float64)
    assert abs(charbonnier(x, EPS).item() - 10.0) < 1e-6


def test_charbonnier_gradient_matches_finite_differences(rng):
    x = torch.as_tensor(rng.normal(scale=0.01, size=20), dtype=torch.float64).requires_grad_()
    charbonnier(x, EPS).backward()
    analytic = (x / torch.sqrt(x ** 2 + EPS ** 2) / x.numel()).detach()
    torch.testing.assert_close(x.grad, analytic, rtol=1e-12, atol=0)
    h = 1e-7
    for i in range(20):
        up, down = x.detach().clone(), x.detach().clone()
        up[i] += h
        down[i] -= h
        fd = (charbonnier(up, EPS) - charbonnier(down, EPS)).item() / (2 * h)
        assert abs(fd - x.grad[i].item()) <= 1e-6 * abs(x.grad[i].item())


def test_charbonnier_matches_loop(rng):
    x = rng.normal(size=(3, 3, 2))
    assert charbonnier(torch.as_tensor(x), EPS).item() == pytest.approx(charbonnier_loop(x, EPS), abs=1e-12)


def test_mosaic_loss_floor_for_consistent_cube(rng, p22):
    x = torch.as_tensor(rng.random((1, 4, 6, 6)))
    y = ops.mosaic_sample(x, p22)
    assert mosaic_loss(x, y, p22, EPS).item() == pytest.approx(EPS, rel=1e-12)


def test_mosaic_loss_null_space(rng, p22):
    x = torch.as_tensor(rng.random((1, 4, 6, 6)))
    y = ops.mosaic_sample(x, p22) + 0.05 * torch.as_tensor(rng.random((1, 6, 6)))
    mask = ops.mask_tensor(p22, 6, 6, dtype=torch.float64)
    perturbed = x + (1 - mask) * torch.as_tensor(rng.normal(size=(1, 4, 6, 6)))
    assert mosaic_loss(perturbed, y, p22).item() == mosaic_loss(x, y, p22).item()


def test_mosaic_loss_single_pixel_error(p22):
    n, delta = 16, 0.3
    x = torch.zeros(1, 4, 4, 4, dtype=torch.float64)
    y = torch.zeros(1, 4, 4, dtype=torch.float64)
    x[0, 0, 0, 0] = delta
    expected = ((n - 1) * EPS + math.sqrt(delta ** 2 + EPS ** 2)) / n
    assert mosaic_loss(x, y, p22, EPS).item() == pytest.approx(expected, rel=1e-12)


def test_cube_loss_properties(rng):
    a = torch.as_tensor(rng.random((3, 3, 2)))
    b = torch.as_tensor(rng.random((3, 3, 2)))
    assert cube_loss(a, a, EPS).item() == pytest.approx(EPS)
    assert cube_loss(a, b).item() == cube_loss(b, a).item()
    assert cube_loss(a, b, EPS).item() == pytest.approx(charbonnier_loop((a - b).numpy(), EPS), abs=1e-7)
    with pytest.raises(ValueError):
        cube_loss(a, b[:2])


class _Oracle(torch.nn.Module):
    """Perfectly consistent demosaicer for one known scene and its transforms."""

    def __init__(self, pattern, cube):
        super().__init__()
        self.pattern = pattern
        self.cube = cube

    def forward(self, y):
        return self.cube


@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
def test_identity_policy_fixed_point_hits_floor(rng, p22, alpha):
    cube = torch.as_tensor(rng.random((1, 4, 4, 4)))
    model = _Oracle(p22, cube)
    y = ops.mosaic_sample(cube, p22)
    total, lc, lm = usd_loss(model, y, IDENTITY, LossConfig(alpha=alpha, eps=EPS))
    assert total.item() == pytest.approx((1 + alpha) * EPS, rel=1e-12)


def test_supervised_objective_floor(rng, p22):
    cube = torch.as_tensor(rng.random((1, 4, 4, 4)))
    total, _, _ = supervised_loss(_Oracle(p22, cube), ops.mosaic_sample(cube, p22), cube, LossConfig())
    assert total.item() == pytest.approx(EPS)


def _tiny(pattern, seed=0, dtype=torch.float64, **kw):
    cfg = ModelConfig.for_pattern(pattern, channels=4, blocks=1, reduction=2, **kw)
    return build_model(cfg, seed=seed, dtype=dtype)


def test_total_loss_never_below_floor(rng, p22):
    model = _tiny(p22)
    torch.nn.init.normal_(model.tail.weight, std=0.2)
    y = torch.as_tensor(rng.random((2, 8, 8)))
    for spec in [IDENTITY, TransformSpec("shift", i=1, j=2), TransformSpec("rotate", k=1),
                 TransformSpec("resize", scale=1.5)]:
        total, _, _ = usd_loss(model, y, spec, LossConfig(alpha=1.0))
        assert total.item() >= 2 * EPS


@pytest.mark.parametrize("stop_gradient", [False, True])
def test_total_loss_gradient_matches_finite_differences(rng, p22, stop_gradient):
    model = _tiny(p22, seed=3)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.as_tensor(rng.normal(scale=0.1, size=tuple(p.shape))))
    y = torch.as_tensor(rng.random((1, 8, 8)))
    spec = TransformSpec("shift", i=1, j=1)
    cfg = LossConfig(stop_gradient_pseudo_gt=stop_gradient)
    loss_fn = lambda: usd_loss(model, y, spec, cfg)[0]  # noqa: E731
    model.zero_grad()
    loss_fn().backward()
    if stop_gradient:
        # with the pseudo target frozen, differences must hold it fixed too
        with torch.no_grad():
            target = ops.apply_transform(model(y), spec, p22)

        def loss_fn():
            x_tilde = model(ops.mosaic_sample(target, p22))
            return cube_loss(x_tilde, target) + mosaic_loss(model(y), y, p22)
    h = 1e-5
    worst = 0.0
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        for idx in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
            orig = flat[idx].item()
            flat[idx] = orig + h
            up = loss_fn().item()
            flat[idx] = orig - h
            down = loss_fn().item()
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = p.grad.view(-1)[idx].item()
            if max(abs(fd), abs(an)) > 1e-8:
                worst = max(worst, abs(an - fd) / max(abs(fd), abs(an)))
    assert worst < 1e-3


def test_train_step_rejects_non_finite(p22):
    model = _tiny(p22)
    opt = torch.optim.Adam(model.parameters())
    y = torch.full((1, 4, 4), float("nan"), dtype=torch.float64)
    with pytest.raises(TrainingDiverged):
        train_step(model, opt, y, np.random.default_rng(0), TrainConfig(), LossConfig())


def _desk(pattern, n=2, size=32, seed=0):
    gts = synthetic_dataset(np.random.default_rng(seed), n, size, size, pattern)
    return [mosaic_sample(g, pattern) for g in gts], gts


def _fit(pattern, seed=0, **kw):
    ys, gts = _desk(pattern)
    cfg = ModelConfig.for_pattern(pattern, channels=8, blocks=1, reduction=2)
    tcfg = TrainConfig(**{"lr": 1e-3, "patch_size": 16, "max_epochs": 4, "sei_every": 2, "seed": seed, **kw})
    return fit(ys, ys, cfg, tcfg, val_gts=gts, train_gts=gts)


def test_fit_is_reproducible():
    pattern = SFAPattern.row_major(2, 2)
    a, b = _fit(pattern, seed=4), _fit(pattern, seed=4)
    assert [r["cube_loss"] for r in a.history[1:]] == [r["cube_loss"] for r in b.history[1:]]
    assert [r.get("sei") for r in a.history] == [r.get("sei") for r in b.history]


def test_fit_zero_epochs_returns_wb_model():
    pattern = SFAPattern.row_major(2, 2)
    result = _fit(pattern, max_epochs=0)
    ys, _ = _desk(pattern)
    np.testing.assert_allclose(demosaic(result.model, ys[0]), wb_interpolate(ys[0], pattern), atol=1e-6)
    assert [r["epoch"] for r in result.history] == [0]


@pytest.mark.parametrize("policy", ["shift", "mixed", "none"])
def test_fit_policies_and_supervised_mode_run(policy):
    pattern = SFAPattern.row_major(2, 2)
    result = _fit(pattern, policy=policy, max_epochs=2)
    assert len(result.history) == 3
    assert all(np.isfinite(r["cube_loss"]) for r in result.history[1:])
    sup = _fit(pattern, supervised=True, max_epochs=2)
    assert sup.history[-1]["psnr"] > 0


def test_fit_without_interp_branch_scores_zero_output():
    pattern = SFAPattern.row_major(2, 2)
    ys, gts = _desk(pattern)
    cfg = ModelConfig.for_pattern(pattern, channels=4, blocks=1, reduction=2, interp_branch=False)
    result = fit(ys, ys, cfg, TrainConfig(patch_size=16, max_epochs=1, sei_every=1), val_gts=gts)
    first = result.history[0]
    assert first["sei"] == 0.0 and math.isnan(first["sam"]) and first["psnr"] < 20


def test_fit_stops_on_sei_threshold():
    pattern = SFAPattern.row_major(2, 2)
    result = _fit(pattern, sei_max=0.0, max_epochs=10)
    assert result.stopped_early
    assert result.history[-1]["epoch"] == 2
    assert result.best_epoch in (0, 2)


def test_fit_requires_data_and_ground_truth_for_supervised():
    pattern = SFAPattern.row_major(2, 2)
    cfg = ModelConfig.for_pattern(pattern, channels=4, blocks=1, reduction=2)
    with pytest.raises(ValueError):
        fit([], [], cfg, TrainConfig())
    with pytest.raises(ValueError):
        fit([np.zeros((4, 4))], [], cfg, TrainConfig(supervised=True))


def test_run_directory_contents(tmp_path):
    pattern = SFAPattern.row_major(2, 2)
    ys, gts = _desk(pattern)
    cfg = ModelConfig.for_pattern(pattern, channels=4, blocks=1, reduction=2)
    result = fit(ys, ys, cfg, TrainConfig(patch_size=16, max_epochs=4, sei_every=2), run_dir=tmp_path,
                 val_gts=gts)
    history = read_history(tmp_path / "history.csv")
    assert [int(r["epoch"]) for r in history] == [0, 1, 2, 3, 4]
    assert history[1]["sei"] is None and history[2]["sei"] is not None
    assert {"psnr", "ssim", "sam", "ergas"} <= set(history[0])
    assert sorted(p.name for p in (tmp_path / "checkpoints").iterdir()) == [
        "epoch000000.pt", "epoch000002.pt", "epoch000004.pt"]
    best, meta = load_checkpoint(tmp_path / "best.pt")
    assert meta["epoch"] == result.best_epoch
    for k, v in result.best_model().state_dict().items():
        assert torch.equal(v, best.state_dict()[k])


def test_checkpoint_round_trip_bit_exact(tmp_path, rng, p33):
    model = build_model(ModelConfig.for_pattern(p33, channels=8, blocks=2, reduction=2, attention="hsa"), seed=1)
    for p in model.parameters():
        torch.nn.init.normal_(p)
    save_checkpoint(model, tmp_path / "m.pt", {"epoch": 12, "seed": 3, "sei_history": [[0, 1e-7]]})
    loaded, meta = load_checkpoint(tmp_path / "m.pt")
    assert meta == {"epoch": 12, "seed": 3, "sei_history": [[0, 1e-7]]}
    assert loaded.config == model.config
    for (k, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert a.dtype == b.dtype and torch.equal(a, b), k
    y = rng.random((6, 9))
    np.testing.assert_array_equal(demosaic(model, y), demosaic(loaded, y))
