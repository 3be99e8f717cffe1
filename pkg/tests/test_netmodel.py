"""Domain model and strict YAML ingestion."""

from __future__ import annotations

import copy

import pytest
import yaml

from dcxtwin.errors import ParseError, ValidationError
from dcxtwin.netmodel import (
    ChannelGrid,
    EdfaUnit,
    FiberSpan,
    LinkKind,
    SiteKind,
    load_topology,
    parse_topology,
    serialize_topology,
    validate_topology,
)

from conftest import DATA_DIR


@pytest.fixture()
def mesh_doc(mesh5):
    """A mutable, known-good document to break in targeted ways."""
    return copy.deepcopy(serialize_topology(mesh5))


class TestLoading:
    def test_mesh_counts(self, mesh5):
        assert len(mesh5.sites) == 7
        assert len(mesh5.links) == 12
        assert mesh5.grid.count == 8
        assert [s.id for s in mesh5.pops()] == ["P1", "P2", "P3", "P4", "P5"]
        assert set(mesh5.allowlist) == {"SER-A-0001", "SER-B-0001"}
        assert set(mesh5.catalogs) == {"vendor-a", "vendor-b"}
        assert set(mesh5.noise_models) == {"nm-a", "nm-b"}

    def test_sites_carry_their_trxs(self, mesh5):
        assert mesh5.sites["U1"].trx_ids == ("trx-u1",)
        assert mesh5.sites["P3"].trx_ids == ()
        assert [t.id for t in mesh5.trx_units_at("U2")] == ["trx-u2"]

    def test_catalog_rebinding(self, mesh5):
        bound = mesh5.catalog_for("trx-u1")
        assert bound.trx_id == "trx-u1"
        assert {m.id for m in bound.modes} == {"A-400-16Q", "A-200-QP"}
        # the template itself is untouched
        assert mesh5.catalogs["vendor-a"].trx_id == "vendor-a"

    def test_link_accessors(self, mesh5):
        assert [l.id for l in mesh5.aal_links_of("U1")] == ["aal-u1-p1"]
        between = mesh5.carrier_links_between("P1", "P2")
        assert [l.id for l in between] == ["c-p1-p2"]
        link = mesh5.links["c-p1-p2"]
        assert link.kind is LinkKind.CARRIER
        assert link.length_km == pytest.approx(80.0)
        assert [e.id for e in link.edfas] == ["amp-p1-p2"]
        assert link.other_end("P1") == "P2"

    def test_edfa_location(self, mesh5):
        assert mesh5.edfa_location("amp-p3-p4") == ("c-p3-p4", 1)
        with pytest.raises(ValidationError):
            mesh5.edfa_location("no-such-edfa")

    def test_grid_frequencies(self, mesh5):
        freqs = mesh5.grid.frequencies_thz()
        assert len(freqs) == 8
        spacing = {round(b - a, 9) for a, b in zip(freqs, freqs[1:])}
        assert spacing == {round(0.05, 9)}
        assert sum(freqs) / len(freqs) == pytest.approx(193.4)

    def test_bad_yaml_is_parse_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("grid: [unclosed\n")
        with pytest.raises(ParseError):
            load_topology(path)


class TestRoundTrip:
    def test_serialize_parse_is_identity(self, mesh5):
        doc = serialize_topology(mesh5)
        again = parse_topology(doc)
        assert validate_topology(again) == []
        assert serialize_topology(again) == doc

    def test_yaml_round_trip(self, mesh5, tmp_path):
        doc = serialize_topology(mesh5)
        path = tmp_path / "mesh.yaml"
        path.write_text(yaml.safe_dump(doc))
        again = load_topology(path)
        assert serialize_topology(again) == doc


class TestStructuralRules:
    def test_unknown_root_key_rejected(self, mesh_doc):
        mesh_doc["surprise"] = 1
        with pytest.raises(ValidationError, match="surprise"):
            parse_topology(mesh_doc)

    def test_missing_required_key_rejected(self, mesh_doc):
        del mesh_doc["allowlist"]
        with pytest.raises(ValidationError):
            parse_topology(mesh_doc)

    def test_duplicate_site_id_rejected(self, mesh_doc):
        mesh_doc["sites"].append({"id": "U1", "kind": "UDC"})
        with pytest.raises(ValidationError, match="duplicate site"):
            parse_topology(mesh_doc)

    def test_unknown_site_kind_rejected(self, mesh_doc):
        mesh_doc["sites"][0]["kind"] = "WAREHOUSE"
        with pytest.raises(ValidationError):
            parse_topology(mesh_doc)

    def test_unknown_element_key_rejected(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        link["elements"][0]["speed"] = 99
        with pytest.raises(ValidationError, match="speed"):
            parse_topology(mesh_doc)

    def test_edfa_needs_exactly_one_nf_form(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        edfa = link["elements"][1]
        assert "nf_curve" in edfa  # serialized form carries the curve
        edfa["nf_db"] = 5.0
        with pytest.raises(ValidationError):
            parse_topology(mesh_doc)
        del edfa["nf_db"]
        parse_topology(mesh_doc)  # curve alone is fine

    def test_fec_threshold_must_be_invertible(self, mesh_doc):
        mesh_doc["catalogs"][0]["modes"][0]["fec_threshold_ber"] = 0.4
        with pytest.raises(ValidationError):
            parse_topology(mesh_doc)


class TestSemanticRules:
    def _violations(self, doc):
        return validate_topology(parse_topology(doc))

    def test_clean_doc_has_none(self, mesh_doc):
        assert self._violations(mesh_doc) == []

    def test_carrier_link_must_join_pops(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        link["ends"] = ["U1", "P2"]
        assert any("c-p1-p2" in v for v in self._violations(mesh_doc))

    def test_aal_must_join_user_site_to_pop(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "aal-u1-p1")
        link["ends"] = ["P1", "P3"]
        assert any("aal-u1-p1" in v for v in self._violations(mesh_doc))

    def test_trx_site_crossref(self, mesh_doc):
        mesh_doc["trxs"][0]["site"] = "nowhere"
        assert any("nowhere" in v for v in self._violations(mesh_doc))

    def test_span_attenuation_range(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        link["elements"][0]["attenuation_db_per_km"] = 3.0
        assert any("attenuation" in v for v in self._violations(mesh_doc))

    def test_duplicate_edfa_ids_flagged(self, mesh_doc):
        links = {l["id"]: l for l in mesh_doc["links"]}
        links["c-p1-p3"]["elements"][1]["id"] = "amp-p1-p2"
        assert any("amp-p1-p2" in v for v in self._violations(mesh_doc))

    def test_gain_outside_range_flagged(self, mesh_doc):
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        link["elements"][1]["gain_db"] = 45.0
        assert any("gain" in v for v in self._violations(mesh_doc))

    def test_disconnected_pop_flagged(self, mesh_doc):
        mesh_doc["sites"].append({"id": "P9", "kind": "POP"})
        violations = self._violations(mesh_doc)
        assert any("P9" in v for v in violations)

    def test_multiple_violations_collected(self, mesh_doc):
        mesh_doc["trxs"][0]["site"] = "nowhere"
        link = next(l for l in mesh_doc["links"] if l["id"] == "c-p1-p2")
        link["elements"][0]["attenuation_db_per_km"] = 3.0
        assert len(self._violations(mesh_doc)) >= 2

    def test_load_topology_raises_on_violations(self, mesh_doc, tmp_path):
        mesh_doc["trxs"][0]["site"] = "nowhere"
        path = tmp_path / "broken.yaml"
        path.write_text(yaml.safe_dump(mesh_doc))
        with pytest.raises(ValidationError):
            load_topology(path)


class TestElementDefaults:
    def test_span_defaults(self):
        span = FiberSpan(length_km=80.0)
        assert span.attenuation_db_per_km == pytest.approx(0.2)
        assert span.dispersion_ps_nm_km == pytest.approx(16.7)
        assert span.gamma_per_w_km == pytest.approx(1.3)

    def test_edfa_tilt_profile(self):
        unit = EdfaUnit(id="e", gain_db=16.0, tilt_db=2.0)
        gains = unit.channel_gains_db(5)
        assert gains[0] == pytest.approx(15.0)
        assert gains[-1] == pytest.approx(17.0)
        assert gains[2] == pytest.approx(16.0)

    def test_edfa_nf_interpolation(self):
        unit = EdfaUnit(id="e", gain_db=10.0, nf_curve=((0.0, 7.0), (20.0, 5.0)))
        assert unit.nf_at(10.0) == pytest.approx(6.0)
        assert unit.nf_at(0.0) == pytest.approx(7.0)
        assert unit.nf_at(30.0) == pytest.approx(5.0)  # clamped at curve edge

    def test_grid_single_channel(self):
        grid = ChannelGrid(center_thz=193.4, spacing_ghz=75.0, count=1, symbol_rate_gbaud=64.0)
        assert grid.frequencies_thz() == (193.4,)

    def test_data_files_stay_valid(self):
        for name in ("mesh5.yaml", "fourspan.yaml"):
            topology = load_topology(DATA_DIR / name)
            assert validate_topology(topology) == []
            assert SiteKind.POP in {s.kind for s in topology.sites.values()}
