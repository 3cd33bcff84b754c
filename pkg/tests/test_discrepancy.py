import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layermerge import Checkpoint, discrepancy_profile, emit_profile
from layermerge.discrepancy import DiscrepancyError

import _reference as ref
from conftest import clone_with_noise, make_checkpoint


def rows_as_tuples(profile):
    return [(r.layer_index, r.kind, r.exceed_count, r.total_count) for r in profile.rows]


class TestProfile:
    def test_self_profile_is_zero(self, rng):
        ckpt = make_checkpoint([(3, 3), (2, 3)], rng)
        for tau in (0.5, 5.0, 1e6):
            profile = discrepancy_profile(ckpt, ckpt, tau)
            assert all(r.exceed_count == 0 for r in profile.rows)
            assert profile.total_fraction() == 0.0

    def test_hand_example(self):
        a = Checkpoint.from_arrays({"g.weight": np.array([1.0, -2.0])})
        b = Checkpoint.from_arrays({"g.weight": np.array([1.2, -2.0])})
        profile = discrepancy_profile(a, b, tau=10.0)
        # thresholds [0.1, 0.2], diffs [0.2, 0]: only the first flags
        assert rows_as_tuples(profile) == [(1, "weight", 1, 2)]
        assert profile.rows[0].fraction == 0.5

    def test_scaled_group_fully_flagged(self, rng):
        arrays = {
            "a.weight": rng.standard_normal((4, 4)) + 5.0,  # keep every element nonzero
            "b.weight": rng.standard_normal((3, 3)) + 5.0,
        }
        a = Checkpoint.from_arrays(arrays)
        tau = 7.0
        scaled = {k: (v * (1 + 2 / tau) if k == "a.weight" else v.copy()) for k, v in arrays.items()}
        b = Checkpoint.from_arrays(scaled)
        profile = discrepancy_profile(a, b, tau)
        by_group = {r.layer_index: r for r in profile.rows}
        assert by_group[1].exceed_count == by_group[1].total_count == 16
        assert by_group[2].exceed_count == 0

    def test_zero_reference_flags_any_nonzero_difference(self):
        a = Checkpoint.from_arrays({"g.weight": np.array([0.0, 0.0])})
        b = Checkpoint.from_arrays({"g.weight": np.array([0.0, 1e-300])})
        profile = discrepancy_profile(a, b, tau=2.0)
        assert profile.rows[0].exceed_count == 1  # identical zero is never flagged

    def test_rows_per_kind(self, rng):
        arrays = {
            "bn.weight": rng.standard_normal(3),
            "bn.bias": rng.standard_normal(3),
            "bn.running_mean": rng.standard_normal(3),
            "bn.running_var": rng.standard_normal(3) ** 2,
        }
        a = Checkpoint.from_arrays(arrays)
        b = clone_with_noise(a, rng)
        profile = discrepancy_profile(a, b, tau=3.0)
        assert [(r.layer_index, r.kind) for r in profile.rows] == [
            (1, "weight"), (1, "bias"), (1, "bn_mean"), (1, "bn_var"),
        ]

    def test_layer_norm_mode(self):
        a = Checkpoint.from_arrays({"g.weight": np.array([3.0, 4.0])})
        b = Checkpoint.from_arrays({"g.weight": np.array([3.0, 4.5])})
        # norm 5, n=2: per-element threshold 5 / (tau*sqrt(2))
        tau = 10.0 * np.sqrt(2.0)
        profile = discrepancy_profile(a, b, tau, mode="layer_norm")
        assert profile.rows[0].exceed_count == 1  # diff 0.5 >= 0.5

    def test_tau_validation(self, rng):
        ckpt = make_checkpoint([(2, 2)], rng)
        for bad in (0.0, -1.0, float("nan")):
            with pytest.raises(DiscrepancyError, match="tau"):
                discrepancy_profile(ckpt, ckpt, bad)

    def test_non_finite_inputs_rejected(self, rng):
        a = make_checkpoint([(2, 2)], rng)
        arrays = {t.name: t.data.copy() for t in a.tensors}
        arrays["layer0.weight"][0, 0] = np.inf
        b = Checkpoint.from_arrays(arrays)
        with pytest.raises(DiscrepancyError, match="non-finite"):
            discrepancy_profile(a, b, 5.0)

    def test_unknown_mode_rejected(self, rng):
        ckpt = make_checkpoint([(2, 2)], rng)
        with pytest.raises(DiscrepancyError, match="mode"):
            discrepancy_profile(ckpt, ckpt, 5.0, mode="cosine")


class TestProfileProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from(["elementwise", "layer_norm"]))
    def test_counts_match_brute_force(self, seed, mode):
        rng = np.random.default_rng(seed)
        shapes = [(int(rng.integers(1, 5)), int(rng.integers(1, 5)))
                  for _ in range(int(rng.integers(1, 4)))]
        a = make_checkpoint(shapes, rng)
        b = clone_with_noise(a, rng, scale=float(rng.random()))
        tau = float(rng.uniform(0.5, 50.0))
        profile = discrepancy_profile(a, b, tau, mode=mode)
        for row in profile.rows:
            group_names = [
                n for g in [g for g in self._groups(a) if g[0] == row.layer_index]
                for n in g[1] if n.endswith("." + {"weight": "weight", "bias": "bias"}[row.kind])
            ]
            a_flat = [float(v) for n in group_names for v in a.get(n).data.ravel()]
            b_flat = [float(v) for n in group_names for v in b.get(n).data.ravel()]
            assert row.exceed_count == ref.ref_discrepancy_counts(a_flat, b_flat, tau, mode)

    @staticmethod
    def _groups(ckpt):
        from layermerge import group_layers

        return [(g.index, g.names()) for g in group_layers(ckpt)]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_monotone_in_tau(self, seed):
        rng = np.random.default_rng(seed)
        a = make_checkpoint([(3, 3)], rng)
        b = clone_with_noise(a, rng)
        taus = sorted(float(t) for t in rng.uniform(0.1, 100.0, size=5))
        counts = [
            sum(r.exceed_count for r in discrepancy_profile(a, b, t).rows) for t in taus
        ]
        assert counts == sorted(counts)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([0.25, 0.5, 2.0, 4.0, -2.0]))
    def test_scale_covariance(self, seed, c):
        rng = np.random.default_rng(seed)
        a = make_checkpoint([(3, 3), (2,)], rng)
        b = clone_with_noise(a, rng)
        scale = lambda ck: Checkpoint.from_arrays({t.name: c * t.data for t in ck.tensors})
        base = discrepancy_profile(a, b, 5.0)
        scaled = discrepancy_profile(scale(a), scale(b), 5.0)
        assert rows_as_tuples(base) == rows_as_tuples(scaled)


class TestEmitProfile:
    def sample_profile(self, rng):
        a = make_checkpoint([(3, 3), (2, 3)], rng)
        return discrepancy_profile(a, clone_with_noise(a, rng), tau=5.0)

    def test_empty_profile_header_only(self):
        from layermerge.discrepancy import DiscrepancyProfile

        payload = emit_profile(DiscrepancyProfile(5.0, "elementwise", ()), "csv")
        assert payload.decode() == "layer_index,kind,exceed_count,total_count,fraction\n"

    def test_single_row_format(self):
        from layermerge.discrepancy import DiscrepancyProfile, ProfileRow

        profile = DiscrepancyProfile(5.0, "elementwise", (ProfileRow(1, "weight", 3, 10),))
        lines = emit_profile(profile, "csv").decode().splitlines()
        assert lines[1] == "1,weight,3,10,0.3"

    def test_csv_and_json_encode_same_rows(self, rng):
        profile = self.sample_profile(rng)
        reader = csv.DictReader(io.StringIO(emit_profile(profile, "csv").decode()))
        csv_rows = {
            (int(r["layer_index"]), r["kind"], int(r["exceed_count"]), int(r["total_count"]))
            for r in reader
        }
        payload = json.loads(emit_profile(profile, "json"))
        json_rows = {
            (r["layer_index"], r["kind"], r["exceed_count"], r["total_count"])
            for r in payload["rows"]
        }
        assert csv_rows == json_rows
        assert payload["tau"] == 5.0

    def test_row_order_stable(self, rng):
        profile = self.sample_profile(rng)
        indices = [(r.layer_index, r.kind) for r in profile.rows]
        kind_rank = {"weight": 0, "bias": 1, "bn_mean": 2, "bn_var": 3, "other": 4}
        assert indices == sorted(indices, key=lambda t: (t[0], kind_rank[t[1]]))
