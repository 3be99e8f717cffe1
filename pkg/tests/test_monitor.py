"""Monitoring and calibration: localization, denoising, parameter fitting."""

from __future__ import annotations

import numpy as np
import pytest

from dcxtwin import qot
from dcxtwin.errors import (
    GridMismatch,
    InconsistentPriors,
    InfeasibleRanges,
    NegativeLength,
    NoBaseline,
    OutOfRange,
    PowerOutOfRange,
    Underdetermined,
)
from dcxtwin.linetwin import FaultSpec, LineTwin, PowerProfile
from dcxtwin.monitor import (
    apply_calibration,
    calibrate_line,
    denoise_profile,
    detect_amplifier_positions,
    detect_nf_fault,
    localize_step_loss,
    optimize_gain_tilt,
    span_length_from_rtt,
)
from dcxtwin.netmodel import FiberSpan, LinkKind, OpticalLink

from conftest import (
    amplified_line,
    designer_prior,
    jitter_snapshots,
    operating_points,
    random_amplified_link,
)

RTT_US_100KM = 979.3441835017746


class TestStepLossLocalization:
    def _profiles(self, twin, sigma=0.0):
        baseline = twin.profile(0.0, noise_sigma_db=sigma)
        twin.set_fault(
            FaultSpec(
                id="pinch",
                kind="step_loss",
                magnitude_db=2.0,
                link_id="line-p1-p2",
                distance_km=160.0,
            )
        )
        current = twin.profile(0.0, noise_sigma_db=sigma)
        twin.clear_fault("pinch")
        return baseline, current

    def test_noiseless_localization_is_exact(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        baseline, current = self._profiles(twin)
        events = localize_step_loss(baseline, current, 1.0)
        assert len(events) == 1
        assert events[0].distance_km == pytest.approx(160.0, abs=1e-12)
        assert events[0].magnitude_db == pytest.approx(2.0, abs=1e-6)
        assert events[0].confidence == pytest.approx(1.0)

    def test_noisy_localization_within_one_sample(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8, seed=11)
        baseline, current = self._profiles(twin, sigma=0.1)
        events = localize_step_loss(baseline, current, 1.0)
        assert len(events) == 1
        assert events[0].distance_km == pytest.approx(160.0, abs=0.5)
        assert events[0].magnitude_db == pytest.approx(2.0, abs=0.3)
        assert 0.0 < events[0].confidence <= 1.0

    def test_no_fault_no_events(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8, seed=3)
        a = twin.profile(0.0, noise_sigma_db=0.1)
        b = twin.profile(0.0, noise_sigma_db=0.1)
        assert localize_step_loss(a, b, 1.0) == []

    def test_two_separated_faults(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        baseline = twin.profile(0.0)
        for fid, km, mag in (("a", 100.0, 2.0), ("b", 250.0, 3.0)):
            twin.set_fault(
                FaultSpec(
                    id=fid,
                    kind="step_loss",
                    magnitude_db=mag,
                    link_id="line-p1-p2",
                    distance_km=km,
                )
            )
        current = twin.profile(0.0)
        events = localize_step_loss(baseline, current, 1.0)
        assert [e.distance_km for e in events] == [100.0, 250.0]
        assert events[0].magnitude_db == pytest.approx(2.0, abs=1e-6)
        assert events[1].magnitude_db == pytest.approx(3.0, abs=1e-6)

    def test_grid_mismatch(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        coarse = twin.profile(0.0, resolution_km=1.0)
        fine = twin.profile(0.0, resolution_km=0.5)
        with pytest.raises(GridMismatch):
            localize_step_loss(coarse, fine, 1.0)

    def test_min_step_must_be_positive(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        p = twin.profile(0.0)
        with pytest.raises(OutOfRange):
            localize_step_loss(p, p, 0.0)


class TestAmplifierDetection:
    def test_interior_amplifiers_found(self, canonical_link, grid8):
        profile = LineTwin(canonical_link, grid8).profile(0.0)
        positions = detect_amplifier_positions(profile, 5.0)
        # the link-end amplifier has no downstream window and stays invisible
        assert positions == [80.0, 160.0, 240.0]

    def test_noisy_detection(self, canonical_link, grid8):
        profile = LineTwin(canonical_link, grid8, seed=9).profile(
            0.0, noise_sigma_db=0.1
        )
        positions = detect_amplifier_positions(profile, 5.0)
        assert len(positions) == 3
        for found, true in zip(positions, (80.0, 160.0, 240.0)):
            assert found == pytest.approx(true, abs=0.5)


class TestDenoise:
    def test_reconstructs_sawtooth(self, canonical_link, grid8):
        profile = LineTwin(canonical_link, grid8, seed=21).profile(
            0.0, noise_sigma_db=0.1
        )
        clean = LineTwin(canonical_link, grid8).profile(0.0)
        result = denoise_profile(profile)
        # the single post-amplifier sample at the far end cannot anchor its own
        # segment, so compare away from the last breakpoint group
        err = (result.profile.values() - clean.values())[:-10]
        assert float(np.sqrt(np.mean(err**2))) < 0.1
        for km in (80.0, 160.0, 240.0):
            assert any(abs(b - km) <= 1.0 for b in result.breakpoints_km)
        for slope in result.slopes_db_per_km[:-1]:
            assert slope == pytest.approx(-0.2, abs=0.05)

    def test_pure_noise_stays_single_segment(self):
        rng = np.random.default_rng(4)
        samples = tuple(
            (float(i * 0.5), float(rng.normal(0.0, 0.1))) for i in range(400)
        )
        flat = PowerProfile(
            samples=samples, resolution_km=0.5, channel_index=None, noise_sigma_db=0.1
        )
        result = denoise_profile(flat)
        assert result.breakpoints_km == ()
        assert result.slopes_db_per_km[0] == pytest.approx(0.0, abs=0.01)

    def test_underdetermined(self):
        tiny = PowerProfile(
            samples=tuple((float(i), 0.0) for i in range(10)),
            resolution_km=1.0,
            channel_index=None,
            noise_sigma_db=0.0,
        )
        with pytest.raises(Underdetermined):
            denoise_profile(tiny)


class TestCalibration:
    def test_noiseless_recovery_is_exact(self, grid8):
        rng = np.random.default_rng(42)
        true_link = random_amplified_link(rng, "cal-line", n_stages=3)
        prior = designer_prior(true_link)
        twin = LineTwin(true_link, grid8)
        snapshots = operating_points(twin)
        result = calibrate_line(snapshots, prior, grid8)
        true_nf = [e.nf_at(e.gain_db) for e in true_link.edfas]
        true_conn = [s.conn_in_db for s in true_link.spans]
        assert list(result.edfa_ids) == [e.id for e in true_link.edfas]
        for fitted, truth in zip(result.nf_db, true_nf):
            assert fitted == pytest.approx(truth, abs=1e-6)
        for fitted, truth in zip(result.span_losses_db, true_conn):
            assert fitted == pytest.approx(truth, abs=1e-6)
        assert result.span_losses_db[-1] == pytest.approx(0.0, abs=1e-6)
        assert max(abs(r) for r in result.residual_osnr_db) < 1e-9
        assert result.identifiability == ()

    def test_calibrated_model_matches_twin(self, grid8):
        rng = np.random.default_rng(7)
        true_link = random_amplified_link(rng, "cal-line", n_stages=4)
        prior = designer_prior(true_link)
        twin = LineTwin(true_link, grid8)
        result = calibrate_line(operating_points(twin), prior, grid8)
        planning = apply_calibration(prior, result)
        truth = qot.link_gsnr(true_link, grid8, 0.0).gsnr
        modeled = qot.link_gsnr(planning, grid8, 0.0).gsnr
        assert np.allclose(modeled, truth, rtol=1e-9)

    def test_noisy_recovery_is_close(self, grid8):
        rng = np.random.default_rng(5)
        true_link = random_amplified_link(rng, "cal-line", n_stages=3)
        prior = designer_prior(true_link)
        twin = LineTwin(true_link, grid8)
        snapshots = jitter_snapshots(
            operating_points(twin, extra_ops=3), 0.1, np.random.default_rng(6)
        )
        result = calibrate_line(snapshots, prior, grid8)
        # individual stages trade off against each other under monitor noise,
        # so parameter recovery is loose while the end-to-end model stays tight
        for fitted, unit in zip(result.nf_db, true_link.edfas):
            assert fitted == pytest.approx(unit.nf_at(unit.gain_db), abs=2.0)
        for fitted, span in zip(result.span_losses_db, true_link.spans):
            assert fitted == pytest.approx(span.conn_in_db, abs=0.3)
        planning = apply_calibration(prior, result)
        truth = qot.link_gsnr(true_link, grid8, 0.0).gsnr
        modeled = qot.link_gsnr(planning, grid8, 0.0).gsnr
        worst = np.max(np.abs(10.0 * np.log10(modeled / truth)))
        assert worst < 0.15

    def test_underdetermined_operating_points(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        prior = designer_prior(canonical_link)
        one_op = [twin.telemetry(0.0, "op-0"), twin.telemetry(0.0, "op-0")]
        with pytest.raises(Underdetermined):
            calibrate_line(one_op, prior, grid8)

    def test_wrong_link_rejected(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8)
        snapshots = operating_points(twin)
        other = amplified_line("other-line", [(80.0, 0.0, 16.0, 5.0, 0.0)] * 4)
        with pytest.raises(InconsistentPriors):
            calibrate_line(snapshots, other, grid8)

    def test_unamplified_link_rejected(self, grid8):
        bare = OpticalLink(
            id="bare",
            ends=("P1", "P2"),
            kind=LinkKind.CARRIER,
            elements=(FiberSpan(length_km=40.0),),
        )
        with pytest.raises(InconsistentPriors):
            calibrate_line([], bare, grid8)


class TestNfFaultDetection:
    @pytest.fixture()
    def calibrated_canonical(self, canonical_link, grid8):
        twin = LineTwin(canonical_link, grid8, seed=31)
        prior = designer_prior(canonical_link)
        noisy = jitter_snapshots(
            operating_points(twin, extra_ops=2), 0.1, np.random.default_rng(100)
        )
        baseline = calibrate_line(noisy, prior, grid8)
        return twin, prior, baseline

    def test_healthy_line_raises_no_flags(self, calibrated_canonical, grid8):
        twin, prior, baseline = calibrated_canonical
        now = jitter_snapshots(
            operating_points(twin), 0.1, np.random.default_rng(200)
        )
        report = detect_nf_fault(now, baseline, prior, grid8)
        assert report.flagged == ()
        assert report.localized is None

    def test_degraded_amplifier_flagged_and_localized(
        self, calibrated_canonical, grid8
    ):
        twin, prior, baseline = calibrated_canonical
        twin.set_fault(
            FaultSpec(id="nf", kind="nf_degradation", magnitude_db=8.0, edfa_id="E3")
        )
        now = jitter_snapshots(
            operating_points(twin), 0.1, np.random.default_rng(201)
        )
        report = detect_nf_fault(now, baseline, prior, grid8)
        assert "E3" in report.flagged
        assert report.localized == "E3"
        refit = dict(report.refit_nf_db)
        assert refit["E3"] == pytest.approx(13.0, abs=1.5)
        assert report.report.outlier_count > 0

    def test_requires_baseline(self, calibrated_canonical, grid8):
        twin, prior, _ = calibrated_canonical
        now = operating_points(twin)
        with pytest.raises(NoBaseline):
            detect_nf_fault(now, None, prior, grid8)

    def test_baseline_for_other_line_rejected(self, calibrated_canonical, grid8):
        twin, _, baseline = calibrated_canonical
        other = amplified_line("other-line", [(80.0, 0.0, 16.0, 5.0, 0.0)] * 4)
        with pytest.raises(InconsistentPriors):
            detect_nf_fault(operating_points(twin), baseline, other, grid8)

    def test_needs_two_operating_points(self, calibrated_canonical, grid8):
        twin, prior, baseline = calibrated_canonical
        single = [twin.telemetry(0.0, "op-0")]
        with pytest.raises(Underdetermined):
            detect_nf_fault(single, baseline, prior, grid8)


class TestGainTiltOptimization:
    def test_flattens_tilted_chain(self, grid8):
        tilted = amplified_line(
            "tilted", [(80.0, 0.0, 16.0, 5.0, 1.5)] * 4, edfa_prefix="T"
        )
        before = qot.link_gsnr(tilted, grid8, 0.0).per_edfa_gsnr_db[-1][1]
        spread_before = max(before) - min(before)
        assert spread_before >= 1.5
        setting = optimize_gain_tilt(tilted, grid8, 0.0)
        assert setting.flatness_db <= 0.5
        assert setting.mean_gsnr_db >= float(np.mean(before)) - 0.2
        trace = setting.objective_trace
        assert len(trace) >= 2
        assert all(b >= a for a, b in zip(trace, trace[1:]))
        assert trace[-1] == pytest.approx(setting.objective)

    def test_deterministic(self, grid8):
        tilted = amplified_line(
            "tilted", [(80.0, 0.0, 16.0, 5.0, 1.0)] * 2, edfa_prefix="T"
        )
        assert optimize_gain_tilt(tilted, grid8, 0.0) == optimize_gain_tilt(
            tilted, grid8, 0.0
        )

    def test_settings_stay_inside_ranges(self, grid8):
        tilted = amplified_line(
            "tilted", [(80.0, 0.0, 16.0, 5.0, -1.5)] * 3, edfa_prefix="T"
        )
        setting = optimize_gain_tilt(tilted, grid8, 0.0)
        units = {e.id: e for e in tilted.edfas}
        for eid, gain, tilt in setting.settings:
            lo, hi = units[eid].gain_range_db
            assert lo <= gain <= hi
            tlo, thi = units[eid].tilt_range_db
            assert tlo <= tilt <= thi

    def test_no_amplifiers_rejected(self, grid8):
        bare = OpticalLink(
            id="bare",
            ends=("P1", "P2"),
            kind=LinkKind.CARRIER,
            elements=(FiberSpan(length_km=40.0),),
        )
        with pytest.raises(InfeasibleRanges):
            optimize_gain_tilt(bare, grid8, 0.0)

    def test_overdriven_start_rejected(self, canonical_link, grid8):
        with pytest.raises(PowerOutOfRange):
            optimize_gain_tilt(canonical_link, grid8, 15.0)


class TestRttInversion:
    def test_frozen_round_trip(self):
        assert span_length_from_rtt(RTT_US_100KM) == pytest.approx(100.0, abs=1e-9)

    def test_offset_subtracted(self):
        assert span_length_from_rtt(RTT_US_100KM + 12.5, 12.5) == pytest.approx(
            100.0, abs=1e-9
        )

    def test_domain(self):
        with pytest.raises(NegativeLength):
            span_length_from_rtt(5.0, processing_offset_us=5.0)
        with pytest.raises(OutOfRange):
            span_length_from_rtt(100.0, n_group=0.0)
