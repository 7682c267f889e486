import math
from fractions import Fraction

import pandas as pd
import pytest
import torch

from diffusion import (
    DdimState,
    build_schedule,
    ddim_init,
    ddim_loop,
    ddim_sample,
    ddim_timesteps,
    ddpm_sample,
    dump_schedule,
    make_batch,
    predict_eps,
    predict_z0,
    q_sample,
    rescale_zero_terminal_snr,
    scaled_linear_schedule,
    training_loss,
    v_target,
)
from errors import ShapeError


@pytest.fixture(scope="module")
def schedule():
    return build_schedule(1000, 1e-4, 0.002)


def test_zero_terminal_rescale(schedule):
    base = scaled_linear_schedule(1000, 1e-4, 0.002)
    assert schedule.zero_terminal
    assert schedule.alphas_cumprod[-1].item() == 0.0
    assert abs(schedule.alphas_cumprod[0].item() - base.alphas_cumprod[0].item()) < 1e-7
    assert bool((schedule.alphas_cumprod[1:] < schedule.alphas_cumprod[:-1]).all())
    assert schedule.alpha_bar(0).item() == 1.0
    with pytest.raises(ValueError):
        rescale_zero_terminal_snr(schedule)


def test_scaled_linear_betas():
    plain = scaled_linear_schedule(10, 1e-4, 0.002)
    assert plain.betas[0].item() == pytest.approx(1e-4)
    assert plain.betas[-1].item() == pytest.approx(0.002)
    with pytest.raises(ValueError):
        scaled_linear_schedule(1)
    with pytest.raises(ValueError):
        plain.alpha_bar(11)


def test_parameterization_inverts(schedule, generator):
    z0 = torch.randn(4, 10, 3, generator=generator, dtype=torch.float64)
    eps = torch.randn(4, 10, 3, generator=generator, dtype=torch.float64)
    t = torch.tensor([1, 250, 999, 1000])
    z_t = q_sample(z0, t, eps, schedule)
    v = v_target(z0, eps, t, schedule)
    assert torch.allclose(predict_z0(z_t, v, t, schedule), z0, atol=1e-6)
    assert torch.allclose(predict_eps(z_t, v, t, schedule), eps, atol=1e-6)


def test_ddim_timesteps():
    assert ddim_timesteps(1000, 4) == [(1000, 750), (750, 500), (500, 250), (250, 0)]
    pairs = ddim_timesteps(1000, 50)
    assert len(pairs) == 50 and pairs[0][0] == 1000 and pairs[-1][1] == 0
    with pytest.raises(ValueError):
        ddim_timesteps(10, 11)


def _oracle(z0, schedule):
    """Returns the exact v for a known clean sample."""

    def denoise(z_t, t, self_cond=None, **_):
        a, b = schedule.coefficients(t, z_t)
        eps = (z_t - a * z0) / b
        return a * eps - b * z0

    return denoise


def test_oracle_denoiser_recovers_the_clean_sample(schedule, generator):
    z0 = torch.randn(2, 12, 4, generator=generator)
    out = ddim_sample(_oracle(z0, schedule), z0.shape, schedule, steps=50, seed=3)
    assert torch.allclose(out, z0, atol=1e-4)


def test_stochastic_sampling_also_lands_on_the_oracle_sample(generator):
    schedule = build_schedule(20, 1e-4, 0.02)
    z0 = torch.randn(1, 6, 2, generator=generator)
    assert torch.allclose(ddpm_sample(_oracle(z0, schedule), z0.shape, schedule, seed=1), z0, atol=1e-4)


def test_sampling_needs_zero_terminal_schedule():
    plain = scaled_linear_schedule(20)
    with pytest.raises(ValueError):
        ddim_sample(lambda z, t, **_: z, (1, 2, 2), plain, steps=5)


def _toy_denoiser(z_t, t, self_cond=None, **_):
    return 0.3 * z_t + 0.1 * self_cond + 1e-4 * t.view(-1, 1, 1)


@pytest.mark.parametrize("eta", [0.0, 0.5])
def test_split_trajectory_matches_a_single_run(schedule, eta):
    full = ddim_sample(_toy_denoiser, (2, 5, 3), schedule, steps=10, eta=eta, seed=21)
    generator = torch.Generator().manual_seed(21)
    state = ddim_init((2, 5, 3), generator)
    state = ddim_loop(_toy_denoiser, state, schedule, steps=10, eta=eta, generator=generator, stop=4)
    assert state.index == 4
    # resuming from a copy of the saved state
    state = DdimState(z=state.z.clone(), v_prev=state.v_prev.clone(), index=state.index)
    state = ddim_loop(_toy_denoiser, state, schedule, steps=10, eta=eta, generator=generator)
    assert torch.equal(state.z, full)
    with pytest.raises(ValueError):
        ddim_loop(_toy_denoiser, state, schedule, steps=10, stop=3)


def test_self_conditioning_feeds_the_previous_estimate(schedule):
    seen = []

    def denoise(z_t, t, self_cond=None, **_):
        seen.append(self_cond.clone())
        return torch.full_like(z_t, float(len(seen)))

    ddim_sample(denoise, (1, 2, 1), schedule, steps=3, seed=0)
    assert seen[0].abs().sum() == 0
    assert torch.equal(seen[1], torch.full((1, 2, 1), 1.0))
    assert torch.equal(seen[2], torch.full((1, 2, 1), 2.0))

    seen.clear()
    ddim_sample(denoise, (1, 2, 1), schedule, steps=3, seed=0, self_conditioning=False)
    assert all(s.abs().sum() == 0 for s in seen)


def test_dump_schedule(tmp_path, schedule):
    path = dump_schedule(schedule, tmp_path / "schedule.csv")
    frame = pd.read_csv(path, float_precision="round_trip")
    assert list(frame.columns) == ["t", "beta", "alpha_bar"]
    assert len(frame) == 1000
    assert frame["t"].iloc[0] == 1
    assert frame["alpha_bar"].iloc[0] == schedule.alphas_cumprod[0].item()
    assert frame["alpha_bar"].iloc[-1] == 0.0


def test_make_batch_shapes(schedule, generator):
    batch = make_batch(torch.zeros(3, 7, 2), schedule, generator, task="class")
    assert batch.t.shape == (3,)
    assert int(batch.t.min()) >= 1 and int(batch.t.max()) <= 1000
    assert batch.conditioning() == {"task": "class"}
    with pytest.raises(ShapeError):
        type(batch)(z0=torch.zeros(3, 7, 2), t=torch.ones(2, dtype=torch.long), eps=torch.zeros(3, 7, 2))


def test_training_loss_without_self_conditioning_draws_no_randomness(schedule):
    calls = []

    def denoise(z_t, t, self_cond=None, **_):
        calls.append(self_cond)
        return torch.zeros_like(z_t)

    generator = torch.Generator().manual_seed(4)
    batch = make_batch(torch.randn(2, 3, 2), schedule, generator)
    before = generator.get_state()
    loss = training_loss(denoise, batch, schedule, self_cond_rate=0.0, generator=generator)
    assert torch.equal(generator.get_state(), before)
    assert len(calls) == 1 and calls[0].abs().sum() == 0
    target = v_target(batch.z0, batch.eps, batch.t, schedule)
    assert loss.item() == pytest.approx(target.pow(2).mean().item())


def test_training_loss_with_full_self_conditioning_runs_two_passes(schedule):
    calls = []

    def denoise(z_t, t, self_cond=None, **_):
        calls.append(self_cond)
        return torch.ones_like(z_t)

    generator = torch.Generator().manual_seed(4)
    batch = make_batch(torch.randn(2, 3, 2), schedule, generator)
    training_loss(denoise, batch, schedule, self_cond_rate=1.0, generator=generator)
    assert len(calls) == 2
    assert torch.equal(calls[1], torch.ones(2, 3, 2))


@pytest.mark.parametrize("t", [1, 300, 700, 1000])
def test_forward_process_energy(schedule, t):
    gen = torch.Generator().manual_seed(t)
    z0 = torch.randn(1, 64, 4, generator=gen, dtype=torch.float64)
    eps = torch.randn(20000, 64, 4, generator=gen, dtype=torch.float64)
    z_t = q_sample(z0.expand_as(eps), torch.full((20000,), t), eps, schedule)
    ab = schedule.alpha_bar(t).item()
    expected = ab * z0.pow(2).sum().item() + (1 - ab) * z0.numel()
    assert z_t.pow(2).sum((1, 2)).mean().item() == pytest.approx(expected, rel=0.01)


def test_terminal_alpha_bar_matches_an_exact_product():
    steps, lo, hi = 1000, 1e-4, 0.002
    plain = scaled_linear_schedule(steps, lo, hi)
    product = Fraction(1)
    for i in range(steps):
        beta = (math.sqrt(lo) + i / (steps - 1) * (math.sqrt(hi) - math.sqrt(lo))) ** 2
        product *= 1 - Fraction(beta)
    assert abs(plain.alphas_cumprod[-1].item() - float(product)) < 1e-9

    rescaled = rescale_zero_terminal_snr(plain)
    first, last = plain.sqrt_alpha_bar[0].item(), math.sqrt(float(product))
    mid = plain.sqrt_alpha_bar[499].item()
    assert rescaled.alphas_cumprod[499].item() == pytest.approx(((mid - last) * first / (first - last)) ** 2, abs=1e-9)


@pytest.mark.parametrize("delta", [0.0, 0.25, -1.5])
def test_training_loss_of_a_shifted_oracle(schedule, delta):
    batch = make_batch(torch.randn(3, 5, 2, dtype=torch.float64), schedule, torch.Generator().manual_seed(6))
    target = v_target(batch.z0, batch.eps, batch.t, schedule)

    def denoise(z_t, t, self_cond=None, **_):
        return target + delta

    loss = training_loss(denoise, batch, schedule, self_cond_rate=0.0)
    if delta == 0.0:
        assert loss.item() == 0.0
    else:
        assert loss.item() == pytest.approx(delta ** 2, rel=1e-9)
