import numpy as np
import pytest

from cdfl.adversary import (
    malicious_group_update,
    place_threats,
    poison_data,
    poison_update,
    stamp_trigger,
)
from cdfl.config import AdversaryConfig, ExperimentConfig, config_from_dict
from cdfl.core import UpdateDelta, flatten
from cdfl.data import CAPACITY_MAX, Dataset
from cdfl.errors import ConfigError
from cdfl.rng import RngHub

SCHEMA = (("shared.w", 10), ("cls_head.w", 4))


def make_delta(rng, scale=1.0):
    return UpdateDelta({n: scale * rng.normal(size=d) for n, d in SCHEMA})


def small_dataset(n=10):
    return Dataset(
        features=np.zeros((n, 8)),
        anomaly=np.array(([0, 1, 1] * ((n + 2) // 3))[:n], dtype=np.int64),
        capacity=np.full(n, 37.0),
    )


class TestPlacement:
    def cfg(self, phi_g, phi_e):
        return config_from_dict(
            {"adversary": {"malicious_group_fraction": phi_g, "malicious_ev_fraction": phi_e}}
        )

    def test_benign_config_empty(self):
        placement = place_threats(self.cfg(0.0, 0.0), RngHub(1).stream("attack"))
        assert placement.malicious_groups == frozenset()
        assert all(not evs for evs in placement.malicious_evs.values())

    def test_one_third_of_six_groups_is_two(self):
        placement = place_threats(self.cfg(1 / 3, 1 / 3), RngHub(2).stream("attack"))
        assert len(placement.malicious_groups) == 2
        # floor(7/3) = 2 Byzantine EVs inside each of the 4 benign groups.
        assert len(placement.malicious_evs) == 4
        assert all(len(evs) == 2 for evs in placement.malicious_evs.values())

    def test_deterministic(self):
        a = place_threats(self.cfg(1 / 3, 1 / 3), RngHub(3).stream("attack"))
        b = place_threats(self.cfg(1 / 3, 1 / 3), RngHub(3).stream("attack"))
        assert a == b

    def test_membership_helpers(self):
        placement = place_threats(self.cfg(1 / 3, 1 / 3), RngHub(4).stream("attack"))
        bad_group = next(iter(placement.malicious_groups))
        assert placement.is_group_malicious(bad_group)
        assert placement.is_ev_malicious(bad_group, 0)  # whole group compromised
        benign_group = next(g for g in range(6) if g not in placement.malicious_groups)
        bad_ev = next(iter(placement.malicious_evs[benign_group]))
        assert placement.is_ev_malicious(benign_group, bad_ev)


class TestDataPoisoning:
    def test_label_flip_all(self):
        data = Dataset(np.zeros((3, 8)), np.array([0, 1, 1]), np.full(3, 37.0))
        adv = AdversaryConfig(attack="label_flip", flip_rate=1.0)
        out = poison_data(data, adv, RngHub(5).stream("a"))
        assert out.anomaly.tolist() == [1, 0, 0]

    def test_badnets_rate_zero_unchanged(self):
        data = small_dataset()
        adv = AdversaryConfig(attack="badnets", trigger_rate=0.0)
        out = poison_data(data, adv, RngHub(6).stream("a"))
        assert np.array_equal(out.features, data.features)
        assert np.array_equal(out.anomaly, data.anomaly)

    def test_badnets_stamps_and_relabels(self):
        data = small_dataset(20)
        adv = AdversaryConfig(attack="badnets", trigger_rate=0.5, trigger_offset=5.0, target_label=0)
        out = poison_data(data, adv, RngHub(7).stream("a"))
        stamped = np.where(out.features[:, 6] != 0)[0]
        assert len(stamped) == 10
        assert np.all(out.anomaly[stamped] == 0)
        assert np.all(out.features[stamped, 7] == 5.0)

    def test_feature_shift_count_oracle(self):
        data = small_dataset(30)
        adv = AdversaryConfig(attack="feature", feature_index=2, feature_shift=3.0, poison_rate=0.4)
        out = poison_data(data, adv, RngHub(8).stream("a"))
        changed = int(np.sum(out.features[:, 2] != data.features[:, 2]))
        assert changed == round(0.4 * 30)
        corrupted = out.capacity != data.capacity
        assert int(np.sum(corrupted)) == changed
        assert np.all(out.capacity[corrupted] == CAPACITY_MAX)

    def test_original_untouched(self):
        data = small_dataset()
        before = data.anomaly.copy()
        poison_data(data, AdversaryConfig(attack="label_flip"), RngHub(9).stream("a"))
        assert np.array_equal(data.anomaly, before)

    def test_model_attack_kind_rejected(self):
        with pytest.raises(ConfigError):
            poison_data(small_dataset(), AdversaryConfig(attack="gauss"), RngHub(10).stream("a"))


class TestModelPoisoning:
    def visible(self, n=6, seed=11):
        hub = RngHub(seed)
        return [make_delta(hub.stream("v", i), scale=0.1) for i in range(n)]

    def test_gauss_zero_sigma_zero_update(self):
        own = make_delta(RngHub(12).stream("own"))
        adv = AdversaryConfig(attack="gauss", sigma_scale=0.0)
        out = poison_update(self.visible(), own, adv, RngHub(12).stream("a"), 7)
        assert np.all(flatten(out) == 0.0)

    def test_gauss_scales_with_benign_spread(self):
        own = make_delta(RngHub(13).stream("own"))
        adv = AdversaryConfig(attack="gauss", sigma_scale=20.0)
        out = poison_update(self.visible(), own, adv, RngHub(13).stream("a"), 7)
        visible_std = float(np.std(np.concatenate([flatten(u) for u in self.visible()])))
        got_std = float(np.std(flatten(out)))
        assert got_std > 5 * visible_std

    def test_trim_attack_outside_benign_range(self):
        own = make_delta(RngHub(14).stream("own"))
        adv = AdversaryConfig(attack="trim_attack", eps_adv=0.1)
        visible = self.visible()
        out = poison_update(visible, own, adv, RngHub(14).stream("a"), 7)
        stacked = np.stack([flatten(u) for u in visible])
        lo, hi = stacked.min(axis=0), stacked.max(axis=0)
        crafted = flatten(out)
        outside = (crafted < lo) | (crafted > hi)
        assert np.all(outside)
        # Pushed opposite the mean sign.
        mean_sign = np.sign(stacked.mean(axis=0))
        assert np.all(np.where(mean_sign > 0, crafted < lo, crafted > hi))

    def test_adaptive_minmax_distance_postcondition(self):
        visible = self.visible(8, seed=15)
        own = make_delta(RngHub(15).stream("own"))
        adv = AdversaryConfig(attack="adaptive_minmax")
        out = poison_update(visible, own, adv, RngHub(15).stream("a"), 7)
        stacked = np.stack([flatten(u) for u in visible])
        crafted = flatten(out)
        max_pairwise = max(
            float(np.linalg.norm(stacked[i] - stacked[j]))
            for i in range(len(visible))
            for j in range(i + 1, len(visible))
        )
        worst = max(float(np.linalg.norm(crafted - stacked[i])) for i in range(len(visible)))
        assert worst <= max_pairwise + 1e-9
        # And it actually moved away from the plain mean.
        assert np.linalg.norm(crafted - stacked.mean(axis=0)) > 0

    def test_krum_attack_colluders_consistent(self):
        visible = self.visible(7, seed=16)
        own = make_delta(RngHub(16).stream("own"))
        adv = AdversaryConfig(attack="krum_attack")
        shared_stream_a = RngHub(77).stream("group", 3)
        shared_stream_b = RngHub(77).stream("group", 3)
        out_a = poison_update(visible, own, adv, shared_stream_a, 7)
        out_b = poison_update(visible, own, adv, shared_stream_b, 7)
        assert out_a == out_b

    def test_scaling_gamma_one_is_identity(self):
        own = make_delta(RngHub(17).stream("own"))
        adv = AdversaryConfig(attack="scaling", gamma_scale=1.0)
        out = poison_update([], own, adv, RngHub(17).stream("a"), 7)
        assert out == own

    def test_scaling_defaults_to_group_size(self):
        own = make_delta(RngHub(18).stream("own"))
        adv = AdversaryConfig(attack="scaling", gamma_scale=None)
        out = poison_update([], own, adv, RngHub(18).stream("a"), 7)
        assert np.allclose(flatten(out), 7.0 * flatten(own))

    def test_empty_visible_falls_back_to_gauss(self):
        own = make_delta(RngHub(19).stream("own"))
        adv = AdversaryConfig(attack="trim_attack")
        out = poison_update([], own, adv, RngHub(19).stream("a"), 7)
        assert flatten(out).size == flatten(own).size  # crafted, no crash

    def test_data_attack_kind_rejected(self):
        own = make_delta(RngHub(20).stream("own"))
        with pytest.raises(ConfigError):
            poison_update([], own, AdversaryConfig(attack="label_flip"), RngHub(20).stream("a"), 7)


class TestGroupUpdate:
    def test_data_attack_returns_member_mean(self):
        hub = RngHub(21)
        members = [make_delta(hub.stream("m", i)) for i in range(4)]
        adv = AdversaryConfig(attack="label_flip")
        out = malicious_group_update([], members, adv, RngHub(21).stream("a"), 7)
        from cdfl.core import mean_delta

        assert out == mean_delta(members)

    def test_model_attack_crafts(self):
        hub = RngHub(22)
        members = [make_delta(hub.stream("m", i)) for i in range(4)]
        visible = [make_delta(hub.stream("v", i), scale=0.1) for i in range(5)]
        adv = AdversaryConfig(attack="gauss", sigma_scale=20.0)
        out = malicious_group_update(visible, members, adv, RngHub(22).stream("a"), 7)
        from cdfl.core import mean_delta

        assert out != mean_delta(members)


def test_stamp_trigger_preserves_labels():
    data = small_dataset(12)
    adv = AdversaryConfig(attack="badnets", trigger_offset=5.0)
    out = stamp_trigger(data, adv)
    assert np.array_equal(out.anomaly, data.anomaly)
    assert np.all(out.features[:, 6] == data.features[:, 6] + 5.0)
    assert np.all(out.features[:, 7] == data.features[:, 7] + 5.0)
