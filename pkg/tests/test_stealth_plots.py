import json

from trigmark.plots import render_all
from trigmark.stealth import StealthRow, stealth_checks, stealth_machine, stealth_matrix, stealth_table


def row(noise, strategy, intensity, psnr, ssim, sim, accepted=0.0):
    return StealthRow(noise, strategy, intensity, 1.0, psnr, ssim, 0.9, sim, 0.5, accepted)


def test_checks_on_synthetic_rows():
    rows = [
        row("poisson", "global", 0.1, 40.0, 0.99, 80.0, 1.0),
        row("multiplicative", "global", 0.1, 30.0, 0.95, 85.0),
        row("gaussian", "global", 0.1, 25.0, 0.90, 10.0),
        row("adversarial", "optimized", 2.0, 35.0, 0.97, 20.0, 1.0),
    ]
    c = stealth_checks(rows)
    assert c["poisson_beats_multiplicative_psnr"] == {0.1: True}
    assert c["n_rivals_at_equal_or_better_ssim"] == 1
    assert c["adversarial_lowest_similarity"] and c["adversarial_lowest_vs_accepted"]
    rows[0] = row("poisson", "global", 0.1, 40.0, 0.99, 15.0, 1.0)
    assert not stealth_checks(rows)["adversarial_lowest_vs_accepted"]


def test_matrix_shape(small_encoder, owner_set):
    rows = stealth_matrix(small_encoder, owner_set, intensities=(0.1,))
    assert len(rows) == 4 * 5 + 1 and rows[-1].noise_type == "adversarial"
    assert len(stealth_table(rows).splitlines()) == len(rows) + 1
    assert json.loads(stealth_machine(rows))["checks"]["poisson_beats_multiplicative_psnr"].keys() == {"0.1"}


def test_render_all_deterministic(tmp_path):
    reports = tmp_path / "reports"
    reports.mkdir()
    (reports / "sweep.json").write_text(json.dumps({"rows": [
        {"seed": 7, "k": 16, "similarity": 99.0}, {"seed": 7, "k": 64, "similarity": 98.0}]}))
    first = render_all(reports, tmp_path / "f1")
    second = render_all(reports, tmp_path / "f2")
    assert set(first) == {"sweep"}
    assert first["sweep"].read_bytes() == second["sweep"].read_bytes()
    assert render_all(tmp_path / "none", tmp_path / "f3") == {}
