import numpy as np
import pytest
from skimage.metrics import structural_similarity

from lightdiffusion.errors import ValidationError
from lightdiffusion.metrics import MetricsReport, format_table, metrics, ssim_map


def _rgb(gray):
    return np.repeat(gray[..., None], 3, axis=-1)


def test_identical_images():
    x = np.random.default_rng(0).uniform(0, 1, (24, 24, 3))
    m = metrics(x, x, np.ones((24, 24)))
    assert m["mae"] == 0 and m["mse"] == 0
    assert m["ssim"] == pytest.approx(1.0, abs=1e-12)


def test_constant_shift():
    x = np.full((16, 16, 3), 0.3)
    m = metrics(x + 0.1, x, np.ones((16, 16)))
    assert m["mae"] == pytest.approx(0.1)
    assert m["mse"] == pytest.approx(0.01)


def test_inverted_checkerboard_has_low_ssim():
    r, c = np.indices((32, 32))
    board = ((r // 4 + c // 4) % 2).astype(float)
    m = metrics(_rgb(board), _rgb(1 - board), np.ones((32, 32)))
    assert m["ssim"] < 0.2


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (40, 40))
    y = np.clip(x + rng.normal(0, 0.1, x.shape), 0, 1)
    ref = structural_similarity(x, y, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0, full=True)[1]
    ours = ssim_map(x, y)
    # the reference crops a 5-pixel border when averaging, compare the interior
    np.testing.assert_allclose(ours[5:-5, 5:-5], ref[5:-5, 5:-5], atol=1e-6)


def test_metrics_symmetric():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 1, (2, 16, 16, 3))
    alpha = rng.uniform(0, 1, (16, 16)) > 0.3
    ma, mb = metrics(a, b, alpha), metrics(b, a, alpha)
    for k in ma:
        assert ma[k] == pytest.approx(mb[k], abs=1e-12)


def test_background_is_ignored():
    x = np.zeros((8, 8, 3))
    y = x.copy()
    y[:, :4] = 5.0
    alpha = np.zeros((8, 8))
    alpha[:, 4:] = 1
    assert metrics(x, y, alpha)["mae"] == 0.0


def test_errors():
    with pytest.raises(ValidationError):
        metrics(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        metrics(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.ones((4, 4)))
    with pytest.raises(ValidationError):
        MetricsReport().mean()


def test_report_csv_and_table():
    rep = MetricsReport()
    rep.add("a", {"mae": 0.1, "mse": 0.01, "ssim": 0.9})
    rep.add("b", {"mae": 0.3, "mse": 0.03, "ssim": 0.7})
    assert rep.mean()["mae"] == pytest.approx(0.2)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "id,mae,mse,ssim"
    assert lines[-1].startswith("mean,0.20000000")
    table = format_table({"identity": rep.mean()})
    assert "identity" in table and "0.2000" in table
