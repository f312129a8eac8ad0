from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from multirecon.field import (
    AnalyticField,
    BackgroundField,
    CanonicalField,
    ConstantField,
    DensityParams,
    LaplaceDensity,
    field_gradient,
    positional_encoding,
    sdf_to_density,
)


def test_laplace_density_closed_form():
    s = torch.tensor([-1.0, -0.01, 0.0, 0.01, 1.0], dtype=torch.float64)
    b = 0.05
    sigma = sdf_to_density(s, DensityParams(b=b))
    expect = [(1 / b) * (1 - 0.5 * math.exp(-abs(x) / b)) if x < 0 else (1 / b) * 0.5 * math.exp(-x / b) for x in s.tolist()]
    np.testing.assert_allclose(sigma.numpy(), expect, rtol=1e-12)
    assert sigma[2].item() == pytest.approx(0.5 / b)
    assert (sigma[1:] <= sigma[:-1]).all()


def test_density_params_validation():
    with pytest.raises(ValueError):
        DensityParams(b=-1.0)
    assert DensityParams(b=0.1).a == pytest.approx(10.0)


def test_learnable_density_matches_fixed_and_clamps():
    d = LaplaceDensity(0.05).double()
    s = torch.linspace(-0.2, 0.2, 9, dtype=torch.float64)
    torch.testing.assert_close(d(s), sdf_to_density(s, b=0.05))
    with torch.no_grad():
        d.log_b.fill_(math.log(1e-9))
    assert d.scale().item() == pytest.approx(d.b_min)


def test_analytic_sdf_matches_body(body):
    f = AnalyticField.from_body(body)
    pts = np.random.default_rng(0).uniform(-0.6, 0.6, (500, 3)) + body.rest_joints.mean(0)
    sdf, rgb = f(torch.as_tensor(pts))
    np.testing.assert_allclose(sdf.numpy(), body.sdf(pts), atol=1e-12)
    assert rgb.shape == (500, 3)


def test_analytic_sdf_gradient_is_unit():
    f = AnalyticField.spheres([(0, 0, 0), (1, 0, 0)], [0.3, 0.2])
    x = torch.as_tensor(np.random.default_rng(1).normal(size=(200, 3)))
    g = field_gradient(f, x)
    np.testing.assert_allclose(g.norm(dim=1).numpy(), 1.0, atol=1e-9)


def test_canonical_field_geometric_init_is_a_blob():
    torch.manual_seed(0)
    f = CanonicalField(6, center=(0.1, 0.2, 0.0), scale=1.0, init_radius=0.4).double()
    d = torch.as_tensor(np.random.default_rng(2).normal(size=(300, 3)))
    d = d / d.norm(dim=1, keepdim=True)
    means = []
    for r in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        pts = torch.tensor([0.1, 0.2, 0.0], dtype=torch.float64) + r * d
        sdf, _ = f(pts, torch.zeros(6, dtype=torch.float64))
        means.append(float(sdf.detach().mean()))
    # a closed blob around the centre: inside at the centre, outside far away, radially increasing
    assert means[0] < 0 < means[-1]
    assert all(b > a for a, b in zip(means, means[1:]))


def test_canonical_field_pose_input_starts_inert():
    torch.manual_seed(0)
    f = CanonicalField(6, init_radius=0.3).double()
    x = torch.randn(10, 3, dtype=torch.float64)
    a, _ = f(x, torch.zeros(6, dtype=torch.float64))
    b, _ = f(x, torch.ones(6, dtype=torch.float64))
    torch.testing.assert_close(a, b)


def test_field_gradient_finite_differences():
    torch.manual_seed(0)
    f = CanonicalField(0, init_radius=0.3, width=16, depth=2).double()
    x = torch.randn(5, 3, dtype=torch.float64) * 0.3
    g = field_gradient(f, x)
    eps = 1e-6
    for k in range(3):
        e = torch.zeros(3, dtype=torch.float64)
        e[k] = eps
        fd = (f(x + e)[0] - f(x - e)[0]) / (2 * eps)
        torch.testing.assert_close(g[:, k], fd, atol=1e-7, rtol=1e-6)


def test_constant_field_has_zero_gradient():
    f = ConstantField(0.5)
    g = field_gradient(f, torch.randn(4, 3, dtype=torch.float64))
    assert (g == 0).all()


def test_positional_encoding_layout():
    x = torch.tensor([[0.25, 0.0, -0.5]])
    e = positional_encoding(x, 2)
    assert e.shape == (1, 3 + 12)
    torch.testing.assert_close(e[0, :3], x[0])
    torch.testing.assert_close(e[0, 3:6], torch.sin(math.pi * x[0]))


def test_background_range_and_frame_codes():
    bg = BackgroundField(3).double()
    d = torch.nn.functional.normalize(torch.randn(8, 3, dtype=torch.float64), dim=1)
    c = bg(d, 1)
    assert c.shape == (8, 3) and ((c > 0) & (c < 1)).all()
    with torch.no_grad():
        bg.codes.weight[2] += 1.0
    assert not torch.allclose(bg(d, 2), bg(d, 1))
