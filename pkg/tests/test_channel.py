import numpy as np
import pytest
import torch

from csi_djscc.channel import (ChannelConfig, apply_awgn, apply_channel,
                               apply_fading_mrc, complex_to_real,
                               make_generator, power_normalize,
                               real_to_complex, snr_to_noise_power)
from csi_djscc.errors import ConfigError, ContractError, DegenerateInputError


def test_real_complex_packing_convention():
    c = torch.tensor([[1.0, 2.0, 3.0, 4.0]])
    s = real_to_complex(c)
    # first half is real parts, second half imaginary parts (not interleaved)
    assert torch.equal(s, torch.tensor([[1.0 + 3.0j, 2.0 + 4.0j]]))
    assert torch.equal(complex_to_real(s), c)
    with pytest.raises(ContractError):
        real_to_complex(torch.zeros(1, 5))


def test_power_normalize_exact_energy():
    g = make_generator(3)
    s = torch.complex(torch.randn(64, 16, generator=g),
                      torch.randn(64, 16, generator=g))
    out = power_normalize(s)
    power = (out.abs() ** 2).sum(dim=-1)
    assert torch.allclose(power, torch.full_like(power, 16.0), atol=1e-4, rtol=0)
    with pytest.raises(DegenerateInputError):
        power_normalize(torch.zeros(2, 4, dtype=torch.complex64))


def test_snr_to_noise_power_values():
    assert abs(snr_to_noise_power(0.0) - 1.0) < 1e-15
    assert abs(snr_to_noise_power(10.0) - 0.1) < 1e-15
    assert abs(snr_to_noise_power(-10.0) - 10.0) < 1e-12
    t = snr_to_noise_power(torch.tensor([0.0, 10.0]))
    assert torch.allclose(t, torch.tensor([1.0, 0.1]), atol=1e-7)


def test_awgn_noise_free_and_statistics():
    s = torch.complex(torch.ones(4, 8), -torch.ones(4, 8))
    y = apply_awgn(s, 200.0, generator=make_generator(0))  # sigma^2 ~ 1e-20
    assert torch.allclose(y, s, atol=1e-8)

    # variance calibration at modest draw count (full-count check in acceptance)
    z = apply_awgn(torch.zeros(50_000, 4, dtype=torch.complex64), 0.0,
                   generator=make_generator(1))
    var = float((z.abs() ** 2).mean())
    assert abs(var - 1.0) < 0.03


def test_mrc_hand_example_noise_free():
    # h = [3, 4, 0], ||h|| = 5: combiner output is 5 s at sigma^2 -> 0
    s = torch.tensor([[2.0 - 1.0j]], dtype=torch.complex128)
    h = torch.tensor([[[3.0, 4.0, 0.0]]], dtype=torch.complex128)
    out = apply_fading_mrc(s, h, 300.0, generator=make_generator(0))
    assert torch.allclose(out, 5.0 * s, atol=1e-10)
    cfg = ChannelConfig(equalize_mrc=True)
    out_eq = apply_fading_mrc(s, h, 300.0, cfg, generator=make_generator(0))
    assert torch.allclose(out_eq, s, atol=1e-10)


def test_mrc_complex_channel_phase_alignment():
    # MRC with a complex channel: output is ||h|| s, phases cancelled
    s = torch.tensor([[1.0 + 0.0j]], dtype=torch.complex128)
    h = torch.tensor([[[3.0j, 4.0]]], dtype=torch.complex128)
    out = apply_fading_mrc(s, h, 300.0, generator=make_generator(0))
    assert torch.allclose(out, torch.tensor([[5.0 + 0.0j]],
                                            dtype=torch.complex128), atol=1e-10)


def test_mrc_post_combining_noise_power():
    # after combining, noise power equals sigma^2 regardless of ||h||
    torch.manual_seed(0)
    batch, n_tx = 100_000, 4
    h_one = torch.complex(torch.randn(1, 1, n_tx), torch.randn(1, 1, n_tx))
    h = h_one.expand(batch, 1, n_tx).to(torch.complex64)
    s = torch.zeros(batch, 1, dtype=torch.complex64)
    for mu in (0.0, 10.0):
        out = apply_fading_mrc(s, h, mu, generator=make_generator(7))
        var = float((out.abs() ** 2).mean())
        assert abs(var - snr_to_noise_power(mu)) < 0.03 * snr_to_noise_power(mu)


def test_mrc_subcarrier_offset_slicing():
    s = torch.ones(1, 2, dtype=torch.complex128)
    h = torch.zeros(1, 5, 2, dtype=torch.complex128)
    h[0, 2, 0] = 2.0  # occupied subcarriers become 2 and 3 with offset 2
    h[0, 3, 1] = 3.0
    cfg = ChannelConfig(subcarrier_offset=2)
    out = apply_fading_mrc(s, h, 300.0, cfg, generator=make_generator(0))
    assert torch.allclose(out, torch.tensor([[2.0 + 0j, 3.0 + 0j]],
                                            dtype=torch.complex128), atol=1e-10)


def test_channel_contract_errors():
    s = torch.ones(2, 4, dtype=torch.complex64)
    h = torch.ones(2, 3, 2, dtype=torch.complex64)  # only 3 subcarriers for k=4
    with pytest.raises(ContractError):
        apply_fading_mrc(s, h, 0.0)
    with pytest.raises(ContractError):
        apply_channel(s, 0.0, ChannelConfig(mode="fading_mrc"))
    with pytest.raises(DegenerateInputError):
        apply_fading_mrc(torch.ones(1, 1, dtype=torch.complex64),
                         torch.zeros(1, 1, 2, dtype=torch.complex64), 0.0)
    with pytest.raises(ConfigError):
        ChannelConfig(mode="nonsense")
    with pytest.raises(ContractError):
        apply_awgn(s, torch.zeros(3))  # mu batch mismatch


def test_mrc_noise_first_sampling_is_reproducible():
    s = torch.complex(torch.randn(8, 4), torch.randn(8, 4))
    h = torch.complex(torch.randn(8, 4, 2), torch.randn(8, 4, 2))
    a = apply_fading_mrc(s, h, 5.0, generator=make_generator(42))
    b = apply_fading_mrc(s, h, 5.0, generator=make_generator(42))
    assert torch.equal(a, b)
    c = apply_fading_mrc(s, h, 5.0, generator=make_generator(43))
    assert not torch.equal(a, c)


def test_fading_mrc_gradients_with_fixed_noise():
    # analytic gradients through the channel match torch.autograd.gradcheck
    torch.manual_seed(1)
    s0 = torch.complex(torch.randn(2, 3, dtype=torch.float64),
                       torch.randn(2, 3, dtype=torch.float64)).requires_grad_(True)
    h = torch.complex(torch.randn(2, 4, 2, dtype=torch.float64),
                      torch.randn(2, 4, 2, dtype=torch.float64))

    def fn(s):
        out = apply_fading_mrc(s, h, 3.0, generator=make_generator(11))
        return complex_to_real(out)

    assert torch.autograd.gradcheck(fn, (s0,), eps=1e-6, atol=1e-8)
