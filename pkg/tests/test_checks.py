import pytest

from splatfuse.checks import CHECKS, MODULES, run_checks


@pytest.mark.parametrize("name", sorted(CHECKS))
def test_check_smoke(name):
    for _, seed, rep in run_checks(name, range(2)):
        assert rep.passed, f"{name} seed {seed}: {rep}"


def test_module_filter():
    names = {n for n, _, _ in run_checks("losses", [0])}
    assert names == {"cross_entropy", "lovasz", "d_ssim", "photometric", "param_consistency"}
    assert set(MODULES) == {"diffcore", "adaptive_fusion", "gaussian_field", "renderer", "losses", "occupancy"}
    with pytest.raises(ValueError):
        list(run_checks("nope"))
